"""Attributed-graph clustering from three fused encoders: autoencoder, GCN and graph transformer."""

from .autoencoder import AeParams, ae_forward, ae_recon_loss, layer_dims, pretrain_ae
from .config import PRESETS, TrainConfig, preset
from .fusion import ForwardOutputs, ModelConfig, TriGfnParams, enhance, forward, objective
from .gcn import GcnParams, gcn_decode, gcn_encode_fused, gcn_layer
from .graphio import Graph, generate_sbm, load_graph, normalize_adjacency, save_graph
from .metrics import ari, clustering_accuracy, evaluate_labels, kmeans, macro_f1, nmi
from .selfsup import Centroids, centroid_gradient, extract_labels, kl_divergence, student_t_assign, target_distribution
from .trainer import EpochLog, TrainResult, save_outputs, train
from .transformer import EdgeIndex, GtParams, attention_layer, gt_decode, gt_encode_fused

__version__ = "0.1.0"
