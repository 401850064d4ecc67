# Monkey patch the stdlib for gevent - this _must_ happen here, as early as
# possible, before the worker pool or the progress spinner touch threads.
from gevent import monkey  # noqa

monkey.patch_all()  # noqa
