"""Numpy CNN steganalysis of JPEG images from their quantised DCT coefficients."""
from .arch import ArchSpec, LayerSpec, Shortcut, arch_by_name, build_net6_spec, build_net11_spec, build_net20_spec
from .checkpoint import Checkpoint, CheckpointStore, load_checkpoint, save_checkpoint
from .ensemble import EvalReport, ProbTable, ensemble_probs, evaluate
from .frontend import JpegPlane, PreprocConfig, decompress_no_round, preprocess, read_jcf, write_jcf
from .manifest import DatasetManifest, PairRecord, read_manifest, write_manifest
from .network import Network, build_network
from .sim import SimConfig, make_synthetic_corpus, simulate_stego
from .train import PlaneStore, TrainConfig, Trainer, train_loop

__version__ = "0.1.0"
