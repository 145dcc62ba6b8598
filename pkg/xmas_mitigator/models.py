"""
Pydantic schemas for every JSON artifact the tools write.
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class MagnitudeReport(BaseModel):
    """Summary of one perturbation estimate."""
    mag_subtract: float = Field(ge=0)
    mag_add: float = Field(ge=0)
    subtract_samples: int = Field(ge=0)
    add_samples: int = Field(ge=0)
    none_samples: int = Field(ge=0)
    max_abs_diff: float = Field(ge=0)


class EncoderSettings(BaseModel):
    """JPEG encoder configuration used by the soothing filter."""
    library: str
    quality: int = Field(ge=1, le=100)
    baseline: bool = True
    subsampling: str = "4:4:4"
    optimize: bool = False
    progressive: bool = False


class SaturationReport(BaseModel):
    """Out-of-bound sample statistics of an image."""
    width: int
    height: int
    channels: int
    black_tuples: int = Field(ge=0)
    white_tuples: int = Field(ge=0)
    histogram: Dict[int, int]


class AttackSidecar(BaseModel):
    """Metadata written next to a synthesized adversarial image."""
    source: str
    epsilon: float = Field(ge=0, le=255)
    mode: str
    iterations: int = Field(ge=1)
    seed: int
    prng: str
    linf: float
    saturation: SaturationReport


class RunSummary(BaseModel):
    """Everything needed to replay one mitigation run."""
    version: str
    input: str
    output: Optional[str] = None
    kernel: str
    kernel_coefficients: List[List[float]]
    border: str
    k: int
    max_steps: int
    soother: str
    classifier: str
    refresh_boundary: bool = False
    round_between_steps: bool = False
    stop_on_stall: bool = True
    stop_reason: str
    steps_run: int
    final_label: Optional[str] = None
    final_confidence: Optional[float] = None
    encoder: Optional[EncoderSettings] = None
    prng: Optional[str] = None


class ProbabilityRow(BaseModel):
    """Exact window probabilities for one kernel side."""
    n: int
    values_per_sample: int
    equal_prob: str
    equal_decimal: float
    strict_reduction_prob: str
    strict_reduction_decimal: float
    quoted: Optional[str] = None


class SweepRow(BaseModel):
    """One kernel's outcome in a kernel sweep."""
    kernel: str
    steps_run: int
    stop_reason: str
    label: str
    confidence: float
    linf_to_reference: Optional[float] = None
    mae_to_reference: Optional[float] = None
