"""Conditional WGAN-GP: transposed-convolution generator, projection critic,
interpolated gradient penalty, optional STFT-L1 spectral loss, training loop.

Architecture (canonical L = 250, scaled widths allowed):

    generator   latent 128 (+ one-hot label) -> linear -> (128, L/10)
                -> convT k9 s5 p2 -> (128, L/2) -> convT k8 s2 p3 -> (64, L)
                -> conv k9 s1 p4 -> (32, L) -> conv k9 s1 p4 -> (C, L) -> tanh
    critic      mirrored strides: conv k8 s2 p3 -> conv k9 s5 p2 -> conv k9 s5 p2,
                leaky_relu(0.2), global average pooling -> features phi (dim h),
                score = w^T phi + <phi, e_y> with a learned class embedding e_y.

The stride-2 layers use an even kernel (8) so the transposed-conv length
formula (L_in - 1) * stride + kernel - 2 * pad lands on integers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .nn import (
    Adam,
    Conv1d,
    ConvTranspose1d,
    Embedding,
    Linear,
    Module,
    Tensor,
    backward,
    concat,
    global_avg_pool1d,
    grad,
    leaky_relu,
    matmul,
    no_grad,
    save_checkpoint,
    unfold1d,
)
from .nn.checkpoint import load_checkpoint

__all__ = [
    "GanTrainConfig",
    "GeneratorNet",
    "ProjectionCritic",
    "generate",
    "critic_score",
    "gradient_penalty",
    "spectral_l1",
    "train_wgan",
    "GanTrainResult",
    "TrainingDiverged",
    "load_generator",
]

# activations whose a.e. second derivative is defined everywhere we evaluate it;
# anything else in the critic would break the double-backprop of the penalty
CRITIC_ACTIVATIONS = ("leaky_relu", "tanh", "silu")


class TrainingDiverged(RuntimeError):
    """Raised when a training loss goes non-finite; carries a diagnostic snapshot."""

    def __init__(self, snapshot: dict):
        super().__init__(f"non-finite loss at step {snapshot.get('step')}: {snapshot}")
        self.snapshot = snapshot


@dataclass
class GanTrainConfig:
    latent_dim: int = 128
    channels: tuple = (128, 128, 64, 32)   # generator progression before the C head
    leaky_slope: float = 0.2
    lambda_gp: float = 10.0
    n_critic: int = 5
    batch_size: int = 64                    # desk-scale default; 256 is the full-scale setting
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    spectral_loss_weight: float = 0.0       # auxiliary loss, off by default
    spectral_nfft: int = 64
    spectral_hop: int = 32
    epochs: int = 10
    seed: int = 0
    smooth_window: int = 50
    early_stop_patience: int | None = None  # epochs without smoothed-loss improvement

    def __post_init__(self):
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 4:
            raise ValueError("generator channel progression needs 4 entries (then C)")


class GeneratorNet(Module):
    """z (+ one-hot y) -> linear seed -> two transposed convs -> refine -> tanh head."""

    def __init__(self, n_channels: int, length: int, n_classes: int,
                 cfg: GanTrainConfig, rng: np.random.Generator):
        if length % 10 != 0:
            raise ValueError(f"generator needs length divisible by 10, got {length}")
        ch = cfg.channels
        self.n_channels, self.length, self.n_classes = n_channels, length, n_classes
        self.latent_dim = cfg.latent_dim
        self.slope = cfg.leaky_slope
        self.seed_len = length // 10
        self.fc = Linear(cfg.latent_dim + n_classes, ch[0] * self.seed_len, rng)
        self.up1 = ConvTranspose1d(ch[0], ch[1], kernel=9, stride=5, padding=2, rng=rng)
        self.up2 = ConvTranspose1d(ch[1], ch[2], kernel=8, stride=2, padding=3, rng=rng)
        self.refine = Conv1d(ch[2], ch[3], kernel=9, stride=1, padding=4, rng=rng)
        self.head = Conv1d(ch[3], n_channels, kernel=9, stride=1, padding=4, rng=rng)

    def forward(self, z: Tensor | np.ndarray, y: np.ndarray) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        y = np.asarray(y)
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"label out of range [0, {self.n_classes})")
        onehot = np.zeros((y.shape[0], self.n_classes))
        onehot[np.arange(y.shape[0]), y] = 1.0
        h = self.fc(concat([z, Tensor(onehot)], axis=1))
        h = leaky_relu(h, self.slope)
        h = h.reshape((z.shape[0], -1, self.seed_len))
        h = leaky_relu(self.up1(h), self.slope)
        h = leaky_relu(self.up2(h), self.slope)
        h = leaky_relu(self.refine(h), self.slope)
        return self.head(h).tanh()


class ProjectionCritic(Module):
    """Strided conv encoder phi, scalar head and class projection: w^T phi + <phi, e_y>."""

    def __init__(self, n_channels: int, length: int, n_classes: int,
                 cfg: GanTrainConfig, rng: np.random.Generator,
                 activation: str = "leaky_relu"):
        if activation not in CRITIC_ACTIVATIONS:
            raise ValueError(
                f"critic activation '{activation}' is not twice-differentiable enough for "
                f"the gradient penalty; choose one of {CRITIC_ACTIVATIONS}")
        if length % 10 != 0:
            raise ValueError(f"critic needs length divisible by 10, got {length}")
        ch = cfg.channels
        self.n_classes = n_classes
        self.slope = cfg.leaky_slope
        self.activation = activation
        self.conv1 = Conv1d(n_channels, ch[3], kernel=8, stride=2, padding=3, rng=rng)
        self.conv2 = Conv1d(ch[3], ch[2], kernel=9, stride=5, padding=2, rng=rng)
        self.conv3 = Conv1d(ch[2], ch[1], kernel=9, stride=5, padding=2, rng=rng)
        self.feature_dim = ch[1]
        self.head = Linear(self.feature_dim, 1, rng, bias=False)
        self.embed = Embedding(n_classes, self.feature_dim, rng)

    def _act(self, x: Tensor) -> Tensor:
        if self.activation == "leaky_relu":
            return leaky_relu(x, self.slope)
        if self.activation == "tanh":
            return x.tanh()
        return x * x.sigmoid()

    def features(self, x: Tensor) -> Tensor:
        h = self._act(self.conv1(x))
        h = self._act(self.conv2(h))
        h = self._act(self.conv3(h))
        return global_avg_pool1d(h)

    def forward(self, x: Tensor | np.ndarray, y: np.ndarray) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        phi = self.features(x)
        base = self.head(phi).reshape((-1,))
        proj = (phi * self.embed(np.asarray(y))).sum(axis=1)
        return base + proj


def generate(gen: GeneratorNet, z: np.ndarray, y: np.ndarray) -> Tensor:
    """Deterministic forward pass of the generator for a latent batch."""
    return gen(z, y)


def critic_score(critic: ProjectionCritic, x, y) -> Tensor:
    """Projection score D(x, y); accepts a single (C, L) window or a batch."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        return critic(arr[None], np.atleast_1d(y)).reshape(())
    return critic(x, y)


def gradient_penalty(critic, x_real: np.ndarray, x_fake: np.ndarray,
                     y: np.ndarray, lam: float, rng: np.random.Generator) -> Tensor:
    """lambda * E_xhat (||grad_xhat D(xhat, y)||_2 - 1)^2 on random interpolates.

    One interpolation coefficient per sample; the gradient norm runs over all
    input coordinates of that sample. Differentiable w.r.t. critic parameters
    (double backprop through the critic).
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ValueError(f"shape mismatch {x_real.shape} vs {x_fake.shape}")
    alpha = rng.uniform(size=(x_real.shape[0],) + (1,) * (x_real.ndim - 1))
    xhat = Tensor(alpha * x_real + (1.0 - alpha) * x_fake, requires_grad=True)
    total = critic(xhat, y).sum()
    (gx,) = grad(total, [xhat], create_graph=True)
    axes = tuple(range(1, x_real.ndim))
    norms = (gx * gx).sum(axis=axes).sqrt()
    return ((norms - 1.0) ** 2).mean() * lam


_DFT_CACHE: dict[int, tuple[Tensor, Tensor]] = {}


def _dft_matrices(nfft: int) -> tuple[Tensor, Tensor]:
    if nfft not in _DFT_CACHE:
        n = np.arange(nfft)[:, None]
        k = np.arange(nfft // 2 + 1)[None, :]
        ang = 2.0 * np.pi * n * k / nfft
        _DFT_CACHE[nfft] = (Tensor(np.cos(ang)), Tensor(-np.sin(ang)))
    return _DFT_CACHE[nfft]


def _stft_mag(x: Tensor, nfft: int, hop: int) -> Tensor:
    """Differentiable Hann STFT magnitude matching dsp.stft_magnitude."""
    b, c, length = x.shape
    frames = unfold1d(x.reshape((b * c, 1, length)), nfft, hop)   # (B*C, nfft, F)
    win = Tensor((0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(nfft) / nfft))[None, :, None])
    ft = (frames * win).swapaxes(1, 2)                            # (B*C, F, nfft)
    cos_m, sin_m = _dft_matrices(nfft)
    re = matmul(ft, cos_m)
    im = matmul(ft, sin_m)
    return (re * re + im * im + 1e-24).sqrt()


def spectral_l1(x_real, x_fake, nfft: int = 64, hop: int = 32) -> Tensor:
    """Mean absolute difference between Hann STFT magnitudes, per channel, averaged."""
    a = x_real if isinstance(x_real, Tensor) else Tensor(x_real)
    b = x_fake if isinstance(x_fake, Tensor) else Tensor(x_fake)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return (_stft_mag(a, nfft, hop) - _stft_mag(b, nfft, hop)).abs().mean()


@dataclass
class GanTrainResult:
    generator: GeneratorNet
    critic: ProjectionCritic
    history: list[dict] = field(default_factory=list)
    best_step: int = 0
    best_generator_state: dict | None = None
    stopped_early: bool = False


def _smoothed(values: list[float], window: int) -> float:
    tail = values[-window:]
    return float(np.mean(np.abs(tail)))


def train_wgan(
    data: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    cfg: GanTrainConfig,
    out_dir: str | Path | None = None,
) -> GanTrainResult:
    """Alternating WGAN-GP training on min-max-normalized windows in [-1, 1].

    Per generator step the critic takes ``n_critic`` updates with loss
    E[D(fake)] - E[D(real)] + GP; the generator then minimizes -E[D(fake)]
    (plus the optional spectral term). Losses are logged per step; the best
    checkpoint is the lowest smoothed absolute generator loss.
    """
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, n_ch, length = data.shape
    if data.min() < -1.0 - 1e-9 or data.max() > 1.0 + 1e-9:
        raise ValueError("training windows must be min-max normalized to [-1, 1]")

    rng = np.random.default_rng(cfg.seed)
    gen = GeneratorNet(n_ch, length, n_classes, cfg, rng)
    critic = ProjectionCritic(n_ch, length, n_classes, cfg, rng)
    opt_g = Adam(gen.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(critic.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2)

    result = GanTrainResult(generator=gen, critic=critic)
    g_losses: list[float] = []
    best = np.inf
    epochs_since_best = 0
    step = 0
    bsz = cfg.batch_size

    if n // bsz < cfg.n_critic:
        raise ValueError(f"{n} windows give {n // bsz} batches of {bsz}; "
                         f"need at least n_critic={cfg.n_critic} per generator step")

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batches = [perm[i: i + bsz] for i in range(0, n - bsz + 1, bsz)]
        improved_this_epoch = False
        cursor = 0
        while cursor + cfg.n_critic <= len(batches):
            d_losses, gps = [], []
            for _ in range(cfg.n_critic):
                idx = batches[cursor]
                cursor += 1
                x_real, y = data[idx], labels[idx]
                z = rng.standard_normal((len(idx), cfg.latent_dim))
                with no_grad():
                    x_fake = gen(z, y).data
                opt_d.zero_grad()
                d_loss = critic(Tensor(x_fake), y).mean() - critic(Tensor(x_real), y).mean()
                if cfg.lambda_gp > 0:
                    gp = gradient_penalty(critic, x_real, x_fake, y, cfg.lambda_gp, rng)
                    d_total = d_loss + gp
                    gps.append(gp.item())
                else:
                    d_total = d_loss
                    gps.append(0.0)
                backward(d_total)
                opt_d.step()
                d_losses.append(d_total.item())

            # generator update on a fresh latent batch; reuse last real batch
            # for labels and the optional spectral reference
            z = rng.standard_normal((len(idx), cfg.latent_dim))
            opt_g.zero_grad()
            x_fake_t = gen(z, y)
            g_loss = -critic(x_fake_t, y).mean()
            spec_val = 0.0
            if cfg.spectral_loss_weight > 0:
                spec = spectral_l1(Tensor(x_real), x_fake_t,
                                   cfg.spectral_nfft, cfg.spectral_hop)
                g_loss = g_loss + cfg.spectral_loss_weight * spec
                spec_val = spec.item()
            backward(g_loss)
            opt_g.step()

            step += 1
            d_mean = float(np.mean(d_losses))
            g_val = g_loss.item()
            if not (np.isfinite(d_mean) and np.isfinite(g_val)):
                raise TrainingDiverged({
                    "step": step, "lr": cfg.lr, "d_loss": d_mean, "g_loss": g_val,
                    "grad_norms": {"generator": opt_g.grad_norms(),
                                   "critic": opt_d.grad_norms()},
                })
            g_losses.append(g_val)
            result.history.append({"step": step, "d_loss": d_mean, "g_loss": g_val,
                                   "gp": float(np.mean(gps)), "spectral": spec_val})

            smoothed = _smoothed(g_losses, cfg.smooth_window)
            if smoothed < best:
                best = smoothed
                result.best_step = step
                result.best_generator_state = gen.get_state()
                improved_this_epoch = True

        if improved_this_epoch:
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if cfg.early_stop_patience is not None and epochs_since_best >= cfg.early_stop_patience:
                result.stopped_early = True
                break

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_history(out_dir / "gan_losses.csv", result.history)
        meta = _gan_meta(gen, cfg, n_classes)
        save_checkpoint(out_dir / "gan_last.ckpt",
                        params=_namespaced(gen, critic), step=step,
                        optimizer=opt_g.state_dict(), meta=meta)
        best_params = dict(_namespaced(gen, critic))
        if result.best_generator_state is not None:
            best_params.update({f"generator/{k}": v
                                for k, v in result.best_generator_state.items()})
        save_checkpoint(out_dir / "gan_best.ckpt", params=best_params,
                        step=result.best_step, meta=meta)
    return result


def _namespaced(gen: GeneratorNet, critic: ProjectionCritic) -> dict[str, np.ndarray]:
    out = {f"generator/{k}": v for k, v in gen.get_state().items()}
    out.update({f"critic/{k}": v for k, v in critic.get_state().items()})
    return out


def _gan_meta(gen: GeneratorNet, cfg: GanTrainConfig, n_classes: int) -> dict:
    meta = {"model": "wgan", "n_channels": gen.n_channels, "length": gen.length,
            "n_classes": n_classes, "config": asdict(cfg)}
    meta["config"]["channels"] = list(cfg.channels)
    return meta


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "d_loss", "g_loss", "gp", "spectral"])
        for row in history:
            w.writerow([row["step"], repr(row["d_loss"]), repr(row["g_loss"]),
                        repr(row["gp"]), repr(row["spectral"])])


def load_generator(path: str | Path) -> tuple[GeneratorNet, dict]:
    """Rebuild the generator (best weights) from a checkpoint written by train_wgan."""
    ck = load_checkpoint(path)
    meta = ck.meta
    if meta.get("model") != "wgan":
        raise ValueError(f"{path}: not a WGAN checkpoint")
    cfg_d = dict(meta["config"])
    cfg_d["channels"] = tuple(cfg_d["channels"])
    cfg = GanTrainConfig(**cfg_d)
    gen = GeneratorNet(meta["n_channels"], meta["length"], meta["n_classes"],
                       cfg, np.random.default_rng(0))
    gen.load_state({k[len("generator/"):]: v for k, v in ck.params.items()
                    if k.startswith("generator/")})
    return gen, meta
