"""forkscan: check forked repositories for unapplied upstream security patches."""

__version__ = "0.1.0"
