"""Extreme-event suppression toolkit for the nine-mode shear-flow model.

Core pieces: the actuated nine-mode dynamics (:mod:`esncontrol.mfe`), a
feedforward echo-state surrogate of the controlled dynamics
(:mod:`esncontrol.esn`), threshold/PID/MPC controllers
(:mod:`esncontrol.controllers`), the reward scheme and episode metrics
(:mod:`esncontrol.rewards`), hyperparameter tuning (:mod:`esncontrol.tuning`)
and the experiment pipeline behind the HTTP service and CLI
(:mod:`esncontrol.pipeline`, :mod:`esncontrol.service`, :mod:`esncontrol.cli`).
"""

__version__ = "0.1.0"
