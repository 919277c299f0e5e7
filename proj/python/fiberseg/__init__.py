try:
    from fiberseg._core import *  # noqa: F401,F403  (installed layout)
    from fiberseg._core import __version__  # noqa: F401
except ImportError:
    from _core import *  # noqa: F401,F403  (in-tree build, .so on PYTHONPATH)
    from _core import __version__  # noqa: F401
