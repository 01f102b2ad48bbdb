"""otopipe: frame-dataset preparation, leakage auditing and evaluation
statistics for video-derived classification experiments.

The package is organized around a small set of immutable values - the
dataset manifest, split assignments, prediction sets - and pure functions
over them:

* :mod:`otopipe.manifest` - data model, tree ingest, validation, storage
* :mod:`otopipe.imaging` - grayscale, blur/entropy scores, crop, hashing
* :mod:`otopipe.pipeline` - trim / score / filter / crop orchestration
* :mod:`otopipe.splitting` - naive frame-level and patient-grouped splits
* :mod:`otopipe.audit` - leakage detection and gating
* :mod:`otopipe.evaluation` - confusion matrix, MCC, AUC, run summaries
* :mod:`otopipe.stats` - two-factor ANOVA, F distribution, delta reports
* :mod:`otopipe.synth` - synthetic datasets and the inflation experiment
* :mod:`otopipe.cli` - the ``otopipe`` executable
"""

__version__ = "0.1.0"
