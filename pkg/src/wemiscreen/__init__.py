"""Prescreeners for wide-band electromagnetic induction (WEMI) sweeps.

Modules
-------
measurement  sweep containers, real stacking and file formats
synthgen     synthetic sweeps and test sites with ground truth
dsrf         discrete spectrum of relaxation frequencies dictionary
filters      DCT downtrack filtering, soil-subspace projection, window features
detect       magnitude, SMF, ACE and JOMP prescreeners
miltrain     multiple-instance training for MI-SMF and MI-ACE
alarms       weighted mean-shift alarm generation
score        halo matching and ROC curves
pipeline     configuration and stage orchestration used by the CLI
"""

__version__ = "0.1.0"
