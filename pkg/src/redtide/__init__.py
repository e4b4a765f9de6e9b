"""Red-team toolkit for attacking and assessing vision-based vessel autonomy.

The package is organised as a library of small, deterministic building
blocks: pixel rasters and patch compositing (:mod:`redtide.imagery`),
detection datasets with tamper-evident digests (:mod:`redtide.dataset`),
a fully differentiable toy grid detector (:mod:`redtide.toydet`), a
uniform detector oracle (:mod:`redtide.oracle`), poisoning and evasion
attack engines (:mod:`redtide.poison`, :mod:`redtide.evasion`), a
dropout-protection scenario simulator (:mod:`redtide.dpm`), and an
engagement checklist / reporting engine (:mod:`redtide.engagement`).
"""

__version__ = "0.1.0"
