from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("cuspidal")
except PackageNotFoundError:
    # running from a source tree that was never installed
    __version__ = "0+unknown"

# environment variable read by the command line tools for the worker thread count
THREADS_ENV = "CUSPIDAL_THREADS"
