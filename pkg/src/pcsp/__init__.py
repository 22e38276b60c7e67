"""Point-cloud completion toolkit.

Learns shape priors for reconstructing dense, complete point sets from
partial scans: a pretrained auto-encoder supplies target latent features,
then a completion network trains against chamfer reconstruction plus
feature-alignment losses (L2 feature matching and a kernel two-sample
adversarial objective). Runs entirely on numpy with a built-in
reverse-mode differentiation tape.
"""

from .autodiff import (Grads, Tensor, backward, default_dtype, grad,
                       precision, tensor, trace)
from .data import (Dataset, Sample, batches, load_manifest, make_synthetic,
                   normalize, parse_cloud, split_dataset, synth_sample,
                   view_crop, write_cloud, write_manifest)
from .losses import (CriticBatch, KernelSpec, LossWeights, feat_match,
                     gan_d_loss, gan_g_loss, interpolate_features,
                     lsgan_losses, mmd2, reconstruction, rq_kernel,
                     total_loss)
from .network import (LatentPair, ModelParams, NetConfig,
                      autoencoder_forward, completion_forward, critic_embed,
                      decode_coarse, decode_fine, encode, fine_seed_centers,
                      init_params, param_shapes)
from .optim import ParamStore, adam_step
from .pointops import (ChamferResult, chamfer, fidelity_error, fps,
                       fps_batch, grid_coords, mirror_xy, rect_grid_coords)
from .training import (Checkpoint, MetricTable, TrainConfig, evaluate,
                       lambda_f_at, load_checkpoint, lr_at, save_checkpoint,
                       train_autoencoder, train_completion, validation_cd)

__version__ = "0.1.0"
