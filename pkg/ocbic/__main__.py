import sys
from collections.abc import Sequence

from ocbic.core.errors import NumericalError, ValidationError
from ocbic.setup import build_parser
from ocbic.util.logger import logger


EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger.debug(f'Running {args.command=}')

    try:
        args.handler(args)
    except ValidationError as err:
        logger.error(f'{args.command}: {err}')
        return EXIT_VALIDATION
    except NumericalError as err:
        logger.error(f'{args.command}: {err}')
        return EXIT_NUMERICAL
    return 0


if __name__ == '__main__':
    sys.exit(main())
