"""Device placement for sharded tensor dataflow graphs under a
work-conserving dynamic scheduler: simulator, classical assignment engines,
and a trainable dual select/place policy."""

__version__ = "0.1.0"
