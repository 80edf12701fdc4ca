"""Chart-based camera calibration and foundation shade prediction."""
from .calibration import (ChartCalibrator, CalibrationProfile, FitError, PatchObservation,
                          apply_profile, build_profile, evaluate_chart, group_patches)
from .color import D50, ChannelCurve, GrayBalanceParams, WhitePoint, delta_e76, lab_to_xyz, linearize, xyz_to_lab
from .dataset import (DatasetError, EmptyRegionError, RegionColor, SampleRow, UnpairedSampleError,
                      assemble_dataset, load_dataset, load_samples, save_dataset)
from .models import LinearShadeRegressor, MeanRegressor, ShortDatasetError, loocv, make_model
from .skin import NoSkinError, is_skin_pixel, skin_mask
from .svr import LinearEpsilonSVR

__version__ = "0.1.0"
