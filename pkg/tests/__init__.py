from .test_about import *
from .test_analysis import *
from .test_cli import *
from .test_core import *
from .test_correlation import *
from .test_dca import *
from .test_logio import *
from .test_pipeline import *
from .test_signals import *
from .test_simulator import *
