"""Two-branch model on RK4-simulated Bouc-Wen hysteresis data (f_s = 750 Hz)."""
from _common import run

if __name__ == "__main__":
    run("boucwen", __doc__)
