from importlib.metadata import PackageNotFoundError, version

from spvd.autodiff import *
from spvd.data import *
from spvd.diffusion import *
from spvd.errors import *
from spvd.metrics import *
from spvd.network import *
from spvd.sparse import *
from spvd.spvd_types import *
from spvd.training import *

try:
    __version__ = version("spvd")
except PackageNotFoundError:
    __version__ = "version-unknown"
