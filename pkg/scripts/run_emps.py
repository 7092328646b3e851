"""G -> MLP -> frozen integrator on a simulated positioning stage with friction."""
from _common import run

if __name__ == "__main__":
    run("emps", __doc__)
