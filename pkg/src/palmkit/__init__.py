"""Palm calculus, factor graphs and cost bounds for point processes on
tori, lattices, cylinders and the hyperbolic disk."""
from .configuration import *  # noqa: F401,F403
from .cost import *  # noqa: F401,F403
from .graph import *  # noqa: F401,F403
from .palm import *  # noqa: F401,F403
from .process import *  # noqa: F401,F403
from .space import *  # noqa: F401,F403
from .stats import *  # noqa: F401,F403
from .weakconv import *  # noqa: F401,F403

__version__ = "0.1.0"
