from sged_cli.__main__ import execute_sged  # noqa: F401

execute_sged()
