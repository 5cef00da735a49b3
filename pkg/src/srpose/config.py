"""Flat ``key = value`` config files with dotted keys.

Lines starting with ``#`` are comments. Sizes are written ``HxW``, lists
comma-separated, booleans ``true``/``false``. Every key must appear in
DEFAULTS; anything else is an error naming the key.
"""
from .net import NetConfig
from .train import TrainSettings

DEFAULTS = {
    # network
    "net.image_size": (64, 48),
    "net.in_channels": 1,
    "net.num_keypoints": 5,
    "net.backbone_widths": (16, 32, 48, 64),
    "net.neck_width": 32,
    "net.embed_channels": 8,
    "net.head_kernels": (5, 7, 9, 11),
    "net.head_bias": True,
    "net.supervision_stride": 4,
    "net.k": 1.0,
    "net.loss_weights": (1.0, 1.0, 1.0, 1.0),
    "net.sigma_base": 2.0,
    "net.supervise_lr": False,
    "net.lr_loss_weight": 1.0,
    # training
    "train.epochs": 30,
    "train.batch_size": 32,
    "train.lr": 1e-3,
    "train.weight_decay": 0.0,
    "train.cosine": True,
    # synthetic data
    "data.count": 2500,
    "data.dir": "",
    # evaluation
    "eval.s": 16,
    "eval.oks_sigma": 0.079,
    "eval.pckh_alpha": 0.5,
    "eval.split": "test",
    "eval.checkpoint": "",
    "eval.oracle": False,
    # standalone SR head and deconv baseline for param-count
    "head.in_channels": 32,
    "head.num_keypoints": 17,
    "head.embed_channels": 8,
    "head.upscale": 4,
    "head.kernel": 9,
    "deconv.in_channels": 2048,
    "deconv.channels": 256,
    "deconv.layers": 3,
    "deconv.kernel": 4,
    # decode benchmark
    "bench.sizes": ((256, 192),),
    "bench.s": (1, 2, 4, 8, 16, 32),
    "bench.trials": 200,
    # heatmap export
    "export.index": 0,
    "export.checkpoint": "",
    # gradient checks
    "gradcheck.shapes": 10,
    "gradcheck.eps": 1e-5,
    "gradcheck.tol": 1e-4,
}

NET_KEYS = {k.split(".", 1)[1] for k in DEFAULTS if k.startswith("net.")}
TRAIN_KEYS = {"epochs", "batch_size", "lr", "weight_decay", "cosine"}


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _size(text):
    h, w = text.lower().split("x")
    return int(h), int(w)


def parse_value(key, text):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}", key)
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, str):
            return text
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], tuple):
                return tuple(_size(t) for t in items)
            if key == "net.image_size":
                return _size(text)
            conv = float if default and isinstance(default[0], float) else int
            return tuple(conv(t) for t in items)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for config key {key!r}", key) from None
    raise ConfigError(f"unsupported config key {key!r}", key)


def format_value(value, key=None):
    if key == "net.image_size":
        return "{}x{}".format(*value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{h}x{w}" for h, w in value)
        return ",".join(str(v) for v in value)
    return str(value)


def load(path=None, overrides=()):
    """Resolve defaults <- file <- ``KEY=VALUE`` overrides into a flat dict."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                key = key.strip()
                cfg[key] = parse_value(key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be KEY=VALUE")
        key, value = item.split("=", 1)
        key = key.strip()
        cfg[key] = parse_value(key, value)
    return cfg


def dump(cfg, path):
    with open(path, "w") as f:
        for key in sorted(cfg):
            f.write(f"{key} = {format_value(cfg[key], key)}\n")


def net_config(cfg):
    try:
        return NetConfig(**{k: cfg["net." + k] for k in NET_KEYS})
    except ValueError as e:
        raise ConfigError(f"invalid net config: {e}") from None


def train_settings(cfg):
    return TrainSettings(**{k: cfg["train." + k] for k in TRAIN_KEYS})
