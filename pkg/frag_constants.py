# Fragment sampling geometry used for the full-size experiments
FULL_FRAME_SIDE = 398
FULL_FRAGMENT_SIDE = 96
FULL_GAP = 48
FULL_JITTER = 7

# Desk-scale geometry: 3*32 + 2*16 + 2*2 = 132 <= 136
DESK_FRAME_SIDE = 136
DESK_FRAGMENT_SIDE = 32
DESK_GAP = 16
DESK_JITTER = 2

FULL_BLOCK_CHANNELS = [32, 64, 128, 256, 512]
FULL_FEATURE_DIM = 512
FULL_HIDDEN_DIMS = [512, 512]

DESK_BLOCK_CHANNELS = [8, 16, 32]
DESK_FEATURE_DIM = 64
DESK_HIDDEN_DIMS = [128]

NUM_CLASSES = 8
LEARNING_RATE = 0.1
BATCH_SIZE = 64

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9

# Training:validation split ratio (10k / 4k images)
SPLIT_TRAIN = 10
SPLIT_VALIDATION = 4

TRAIN_MANIFEST = "train.manifest"
VALIDATION_MANIFEST = "validation.manifest"
IMAGE_SUFFIX = ".ppm"

CHECKPOINT_MAGIC = b"FRAG"
CHECKPOINT_VERSION = 1

METRICS_COLUMNS = ["epoch", "train_loss", "val_accuracy", "train_accuracy"]
REPORT_COLUMNS = ["image", "perfect", "correctly_placed", "greedy_score", "optimal_score"]

LOG_FILE_ENV = "FRAGKIT_LOG_FILE"
LOG_LEVEL_ENV = "FRAGKIT_LOG_LEVEL"
RUN_LOG_DIR_ENV = "FRAGKIT_RUN_LOG_DIR"
DEFAULT_LOG_FILE = "fragkit.log"
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_RUN_LOG_DIR = "logs"
