"""Time-reversal symmetry workbench: simulators, reversibility checks, augmented replay and SAC"""
