from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ocbic.util.fs import ROOT_DIR


MIN_QMC_POINTS = 256
MIN_QMC_RANDOMIZATIONS = 8


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=ROOT_DIR / '.env',
        env_file_encoding='utf-8',
        env_prefix='OCBIC_',
        extra='ignore',
    )

    DEV_ENV: bool = False

    SEED: int = Field(default=20190101, ge=0)

    QMC_POINTS: int = 2**14
    QMC_RANDOMIZATIONS: int = 12
    JITTER_SCALE: float = 1e-12

    MC_SAMPLES: int = 10**6
    OVERLAP_DRAWS: int = 10**5

    ORACLE_DRAWS: int = 10**6
    ORACLE_BATCH: int = 2**18
    MIN_ACCEPTANCE: float = 1e-4

    SIM_WORKERS: int = 1

    BIC_DIFFERENCE_ADVISORY: float = 10.0

    @field_validator('QMC_POINTS')
    @classmethod
    def validate_points(cls, v: int) -> int:
        if v < MIN_QMC_POINTS:
            msg = f'QMC_POINTS must be at least {MIN_QMC_POINTS}, got {v}.'
            raise ValueError(msg)
        return v

    @field_validator('QMC_RANDOMIZATIONS')
    @classmethod
    def validate_randomizations(cls, v: int) -> int:
        if v < MIN_QMC_RANDOMIZATIONS:
            msg = f'QMC_RANDOMIZATIONS must be at least {MIN_QMC_RANDOMIZATIONS}, got {v}.'
            raise ValueError(msg)
        return v

    @field_validator('SIM_WORKERS', 'OVERLAP_DRAWS', 'ORACLE_DRAWS', 'ORACLE_BATCH', 'MC_SAMPLES')
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            msg = f'Expected a positive integer, got {v}.'
            raise ValueError(msg)
        return v


config = Settings()
