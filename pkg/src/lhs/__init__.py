"""Local higher-order statistics (LHS) texture and face descriptors.

Differential vectors of 3x3 neighborhoods are modeled by a diagonal GMM
and encoded as averaged Fisher scores; LBP/LTP histograms serve as
baselines. Linear SVMs and a learned joint metric handle classification
and pair verification.
"""

from .raster import (SamplingMode, center_crop, crop, extract_diff_vectors, hflip, load_image,
                     parse_netpbm, resize, save_pgm)
from .patterns import (build_uniform_table, lbp_code, ltp_split_codes, normalize_hist,
                       pattern_descriptor, pattern_histogram)
from .gmm import GmmModel, TrainConfig, em_fit, kmeans_init, log_density, posteriors, train_gmm
from .encoder import (Descriptor, LhsEncoder, WhiteningStats, compute_whitening, descriptor_dim,
                      encode_image, fisher_score, fisher_scores)
from .metric import MetricModel, SgdConfig, distance, sgd_train, wpca_init
from .classify import (LinearSvmModel, eval_report, roc_eer, svm_cv_select_c, svm_predict,
                       svm_train, verify_threshold)

__version__ = "0.1.0"
