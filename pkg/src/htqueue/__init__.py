"""Heavy-traffic admission and scheduling control for a multiclass G/G/1 queue with finite buffers.

Modules: scenario (parameters and workload reduction), fbp (free-boundary
solver), reflect (Skorohod map and RBM Monte Carlo), qsim (discrete-event
simulator), mdp (two-class MDP oracle), metrics (throughput times, Little's
law, compliance), cli.
"""
__version__ = "0.1.0"
