"""Library-based hyperspectral unmixing by archetypal analysis."""

from .actset import SimplexLsqOptions, SimplexSolution, solve_simplex_lsq_batch, solve_simplex_lsq_column
from .core import (AbundanceMatrix, ContributionMatrix, DataCube, FitResult, SpectralLibrary,
                   frobenius_norm, mat_from_rows)
from .metrics import Alignment, align_endmembers, aligned_sre_db, sre_db
from .model import (SunaaConfig, a_step, b_step, drop_and_renormalize, fit, fit_blind_aa,
                    init_uniform, objective)
from .synth import GroundTruth, Layout, SceneSpec, add_noise, generate_scene, make_library

__version__ = "0.1.0"
