"""Over-parametrized convolutional ensemble classifiers trained by projected SGD."""

__version__ = "0.1.0"

from .grad import GradEngine, finite_diff_grad, grad_ensemble  # noqa: E402
from .hmax import (GeneratorConfig, HierarchicalModel, Node, empirical_regret,  # noqa: E402
                   eval_maxpool_model, sample_dataset)
from .model import (CnnConfig, CnnParams, ConfigError, ImageGrid, cnn_forward,  # noqa: E402
                    ensemble_eval, n_params, theorem2_architecture)
from .sgd import (TrainConfig, classify, classify_many, init_params, project_A, project_B,  # noqa: E402
                  sgd_train)
