"""Diffusion generative models on embedded manifolds."""

try:
    # Installed layout: the extension lives inside the package.
    from ._core import *  # noqa: F401,F403
    from ._core import __version__  # noqa: F401
except ImportError:
    # Build-tree layout: the extension sits on PYTHONPATH next to the package.
    from _core import *  # noqa: F401,F403
    from _core import __version__  # noqa: F401
