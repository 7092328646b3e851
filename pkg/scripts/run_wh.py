"""Wiener-Hammerstein chain G -> MLP -> G on a simulated saturating plant."""
from _common import run

if __name__ == "__main__":
    run("wh", __doc__)
