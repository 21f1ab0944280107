from warnings import filterwarnings

from ocbic.core.errors import UnderflowWarning


# every underflow floor is reported, not just the first one per call site
filterwarnings('always', category=UnderflowWarning)
