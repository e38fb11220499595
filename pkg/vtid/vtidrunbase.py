"""Run-once behaviour shared by the batch stages of VTID."""

from abc import ABCMeta, abstractmethod


class VtidRunBase(metaclass=ABCMeta):
    """
    Base of the three batch stages: FlowGenerator turns traces into labeled
    flows, FeatureSaver writes a feature matrix to CSV, and AddfsRanker ranks
    the columns of a dataset. Each stage takes all of its inputs in
    __init__, does its work in a single run() call, and hands its product
    out through get_data() (FeatureSaver has no product beyond its files).

    A stage's run() starts with check_run_fatal() and its getters start with
    check_ran_fatal(), so a second run() or an early get_data() is a
    RuntimeError naming the stage.

    Attributes:
        _run_yet: whether run() has been called
    """

    def __init__(self):
        self._run_yet = False

    @abstractmethod
    def run(self):
        """Does the stage's work; may only be called once"""

    def check_run_fatal(self):
        """Marks the stage as run, or raises RuntimeError on a second run"""
        if self._run_yet:
            raise RuntimeError(
                f"This {type(self).__name__} has already been run")
        self._run_yet = True

    def check_ran_fatal(self):
        """Raises RuntimeError if the stage's product is read before run()"""
        if not self._run_yet:
            raise RuntimeError(
                f"This {type(self).__name__} has not been run yet")
