"""Cooperative spectrum sensing under learning-empowered Byzantine attack.

Submodules:

* :mod:`lebsim.trace` -- synthetic and recorded signal-strength traces
* :mod:`lebsim.learners` -- incremental binary classifiers
* :mod:`lebsim.fusion` -- fusion center (defenses + fusion rules)
* :mod:`lebsim.attacker` -- the Learn-Evaluate-Beat attacker
* :mod:`lebsim.influence` -- influence-limiting policy
* :mod:`lebsim.harness` -- duel loop, metrics, sweeps
* :mod:`lebsim.cli` -- command line entry point
"""

__version__ = "0.1.0"
