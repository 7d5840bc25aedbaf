"""cilab: a class-incremental continual-learning laboratory.

Train one small generative model per class and classify by Bayes' rule
with importance-sampled likelihoods, next to streaming LDA and the usual
rehearsal-free baselines, on deterministic seeded benchmark streams.
"""

from .rng import Rng, rng_standard_normal
from .numerics import gaussian_log_density, gaussian_log_density_diag, log_sum_exp, matmul
from .nets import (AdamState, DenseNet, Layer, adam_step, glorot_net,
                   load_dense_net, masked_cross_entropy, masked_cross_entropy_batch,
                   net_backward, net_forward, save_dense_net)
from .vae import (VaeModel, elbo_loss_and_grads, importance_log_likelihood,
                  importance_log_likelihood_batch, new_vae, sample, sample_batch)
from .genclass import (GenerativeClassifier, load_generative_classifier,
                       save_generative_classifier)
from .slda import (SldaState, load_slda, save_slda, slda_init_covariance,
                   slda_observe, slda_predict, slda_update_covariance,
                   slda_update_mean)
from .stream import (Benchmark, Dataset, StreamEvent, aggregate_runs,
                     check_compatible, evaluate_accuracy, load_dataset,
                     load_mnist, make_stream, make_synthetic_gaussian,
                     mnist_benchmark, save_dataset, split_benchmark)

__version__ = "0.1.0"
