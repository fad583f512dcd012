# conftest.py — Project root marker for pytest
#
# Placing conftest.py here makes this directory the pytest rootdir and puts it
# on sys.path, so `from chain.pov import ...` works wherever pytest is run from.
