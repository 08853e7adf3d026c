"""
Exception hierarchy for gdfm-vol

Every error raised on purpose by the library derives from GdfmError so the
CLI can turn it into a red one-line message and a non-zero exit code.
"""


class GdfmError(Exception):
    """Base class for all gdfm-vol errors"""


class PanelFormatError(GdfmError, ValueError):
    """Input file could not be turned into a valid Panel"""


class ConfigError(GdfmError, ValueError):
    """Configuration is missing, malformed or inconsistent with the data"""


class SpectralError(GdfmError, ValueError):
    """Spectral estimation, eigendecomposition or inverse transform failed"""


class YuleWalkerError(GdfmError, ValueError):
    """Yule-Walker system could not be solved"""


class EstimationError(GdfmError, ValueError):
    """A GDFM stage could not be fitted with the given arguments"""


class ForecastError(GdfmError, ValueError):
    """Interval construction failed (window, quantile index or shapes)"""


class GarchError(GdfmError, ValueError):
    """GARCH(1,1) fit could not be attempted"""


class BacktestError(GdfmError, ValueError):
    """Hit sequences are too short or inconsistent"""


class SimulationError(GdfmError, ValueError):
    """Simulation design or Monte Carlo aggregation is inconsistent"""
