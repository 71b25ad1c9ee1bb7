"""Benchmark harness for open-vocabulary semantic mapping outputs.

Two evaluation tracks share one dataset layout:

* point-level 3D segmentation metrics (mAcc, f-mIoU) per lighting/velocity
  condition, with degradation relative to a reference condition;
* an LLM/LVLM question-answering pipeline that probes scene-graph quality.
"""

__version__ = "0.1.0"
