"""Visual prompt generation and application.

A single decoder turns two learnable trigger vectors into a pair of prompts:
a full-canvas spatial prompt whose center is masked away, and a small
low-frequency prompt injected into the image's DCT coefficients. The decoder
is a fixed stack of [nearest-neighbor 2x upsample -> 3x3 conv -> tanh] blocks
growing a 7x7 trigger grid until it covers the classifier's input canvas; the
frequency prompt taps the first intermediate feature map that covers the
low-frequency block size through a 1x1 convolution. All prompt content is
input-independent: images only enter when a prompt is applied.

Everything here is a pure function of (params, geometry), so concurrent calls
with shared read-only params are safe.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, InvalidInputError
from .imageops import bilinear_resize, center_crop, center_pad, clamp01
from .spectral import dct2, embed_low_frequency, idct2

TRIGGER_GRID = 7      # side of the decoder input grid
TRIGGER_CHANNELS = 8  # channels of the reshaped main trigger
TRIGGER_LEN = TRIGGER_GRID * TRIGGER_GRID * TRIGGER_CHANNELS  # 392
TRUNK_WIDTH = 8       # channels carried through the conv blocks

FREQ_SCALE_INIT = -5.0  # sigmoid(-5) ~ 0.0067: frequency path starts muted


@dataclass(frozen=True)
class Geometry:
    """Canvas sizes: oracle input (full), resized image (resized), low-frequency
    prompt block (freq). Centered padding needs an even full-resized gap."""

    full_h: int = 224
    full_w: int = 224
    resized_h: int = 192
    resized_w: int = 192
    freq_h: int = 56
    freq_w: int = 56
    channels: int = 3

    def __post_init__(self):
        for f, r, full in ((self.freq_h, self.resized_h, self.full_h),
                           (self.freq_w, self.resized_w, self.full_w)):
            if not (1 <= f <= r < full):
                raise InvalidInputError(
                    f"need freq <= resized < full on both axes, got {f}, {r}, {full}"
                )
            if (full - r) % 2 != 0:
                raise InvalidInputError("full - resized must be even on both axes")
        if self.channels < 1:
            raise InvalidInputError("need at least one channel")

    @property
    def oracle_shape(self):
        return (self.channels, self.full_h, self.full_w)


def pick_resized_side(h, w):
    """Resize rule: large inputs (smaller side >= 160) go to 192, others to 112."""
    return 192 if min(h, w) >= 160 else 112


@dataclass(frozen=True)
class PrompterParams:
    """All trainable scalars: decoder weights, two trigger vectors, and the
    frequency-strength scalar (passed through a sigmoid when applied)."""

    decoder_weights: np.ndarray
    trigger_main: np.ndarray
    trigger_spatial: np.ndarray
    freq_scale: float


@dataclass(frozen=True)
class PromptPair:
    freq_vp: np.ndarray     # (channels, freq_h, freq_w)
    spatial_vp: np.ndarray  # (channels, full_h, full_w)


def _decoder_layout(geom):
    """Block output sizes, conv shapes (cout, cin, k), and the frequency tap index."""
    sizes = []
    s = TRIGGER_GRID
    while s < max(geom.full_h, geom.full_w):
        s *= 2
        sizes.append(s)
    tap = next(i for i, s in enumerate(sizes) if s >= max(geom.freq_h, geom.freq_w))
    convs = [(TRUNK_WIDTH, TRIGGER_CHANNELS + TRIGGER_LEN, 3)]
    convs += [(TRUNK_WIDTH, TRUNK_WIDTH, 3)] * (len(sizes) - 1)
    convs.append((geom.channels, TRUNK_WIDTH, 3))  # spatial head
    convs.append((geom.channels, TRUNK_WIDTH, 1))  # frequency head
    return sizes, convs, tap


def decoder_param_count(geom):
    _, convs, _ = _decoder_layout(geom)
    return sum(cout * cin * k * k + cout for cout, cin, k in convs)


def param_count(geom):
    """Length of the flat vector seen by the zeroth-order optimizer."""
    return decoder_param_count(geom) + 2 * TRIGGER_LEN + 1


def init_params(geom, rng, freq_scale=FREQ_SCALE_INIT):
    """Seeded initialization: 1/sqrt(fan_in) conv weights, zero biases,
    standard-normal triggers, muted frequency scale."""
    _, convs, _ = _decoder_layout(geom)
    chunks = []
    for cout, cin, k in convs:
        fan_in = cin * k * k
        chunks.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=cout * fan_in))
        chunks.append(np.zeros(cout))
    return PrompterParams(
        decoder_weights=np.concatenate(chunks),
        trigger_main=rng.normal(size=TRIGGER_LEN),
        trigger_spatial=rng.normal(size=TRIGGER_LEN),
        freq_scale=float(freq_scale),
    )


def flatten(params):
    """Single flat float64 view: [decoder | trigger_main | trigger_spatial | freq_scale]."""
    return np.concatenate([
        np.asarray(params.decoder_weights, dtype=np.float64),
        np.asarray(params.trigger_main, dtype=np.float64),
        np.asarray(params.trigger_spatial, dtype=np.float64),
        [float(params.freq_scale)],
    ])


def unflatten(vec, geom):
    """Inverse of :func:`flatten` for the given geometry."""
    vec = np.asarray(vec, dtype=np.float64).ravel()
    expected = param_count(geom)
    if vec.size != expected:
        raise ConfigurationError(f"expected {expected} parameters, got {vec.size}")
    n_dec = decoder_param_count(geom)
    return PrompterParams(
        decoder_weights=vec[:n_dec].copy(),
        trigger_main=vec[n_dec:n_dec + TRIGGER_LEN].copy(),
        trigger_spatial=vec[n_dec + TRIGGER_LEN:n_dec + 2 * TRIGGER_LEN].copy(),
        freq_scale=float(vec[-1]),
    )


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out


def _conv_same(x, weight, bias):
    """3x3 'same' convolution via im2col; x is (cin, h, w), weight (cout, cin, 3, 3)."""
    cin, h, w = x.shape
    padded = np.zeros((cin, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = x
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(h * w, cin * 9)
    out = patches @ weight.reshape(weight.shape[0], -1).T + bias
    return out.T.reshape(weight.shape[0], h, w)


def _conv1x1(x, weight, bias):
    return np.tensordot(weight, x, axes=([1], [0])) + bias[:, None, None]


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def _unpack_decoder(decoder_weights, convs):
    weights = np.asarray(decoder_weights, dtype=np.float64).ravel()
    layers, pos = [], 0
    for cout, cin, k in convs:
        n_w, n_b = cout * cin * k * k, cout
        layers.append((weights[pos:pos + n_w].reshape(cout, cin, k, k),
                       weights[pos + n_w:pos + n_w + n_b]))
        pos += n_w + n_b
    if pos != weights.size:
        raise ConfigurationError(f"decoder expects {pos} weights, got {weights.size}")
    return layers


def decode(params, geom):
    """Run the decoder: trigger vectors in, (frequency VP, spatial VP) out.

    The main trigger is reshaped to the input grid; the spatial trigger is
    broadcast over the grid as constant planes and concatenated on the channel
    axis, so it shapes everything downstream of the trunk input. The frequency
    head taps the first block that covers the frequency block size; the
    frequency-strength scalar is not consumed here at all.
    """
    sizes, convs, tap = _decoder_layout(geom)
    layers = _unpack_decoder(params.decoder_weights, convs)
    trigger_main = np.asarray(params.trigger_main, dtype=np.float64)
    trigger_spatial = np.asarray(params.trigger_spatial, dtype=np.float64)
    if trigger_main.size != TRIGGER_LEN or trigger_spatial.size != TRIGGER_LEN:
        raise ConfigurationError(f"trigger vectors must have length {TRIGGER_LEN}")

    grid = trigger_main.reshape(TRIGGER_CHANNELS, TRIGGER_GRID, TRIGGER_GRID)
    planes = np.broadcast_to(
        trigger_spatial[:, None, None], (TRIGGER_LEN, TRIGGER_GRID, TRIGGER_GRID)
    )
    x = np.concatenate([grid, planes], axis=0)

    feats = []
    for (w, b) in layers[:len(sizes)]:
        x = np.tanh(_conv_same(_upsample2(x), w, b))
        feats.append(x)

    w_sp, b_sp = layers[len(sizes)]
    spatial = np.tanh(_conv_same(feats[-1], w_sp, b_sp))
    spatial_vp = center_crop(spatial, geom.full_h, geom.full_w)

    w_fq, b_fq = layers[len(sizes) + 1]
    freq = np.tanh(_conv1x1(feats[tap], w_fq[:, :, 0, 0], b_fq))
    freq_vp = center_crop(freq, geom.freq_h, geom.freq_w)
    return PromptPair(freq_vp=freq_vp, spatial_vp=spatial_vp)


def apply_frequency_prompt(resized, freq_vp, freq_scale):
    """Inject the prompt's DCT block into the image's low frequencies.

    Per channel: idct2(dct2(resized) + sigmoid(freq_scale) * pad(dct2(freq_vp))),
    clamped back to [0, 1].
    """
    resized = np.asarray(resized, dtype=np.float64)
    freq_vp = np.asarray(freq_vp, dtype=np.float64)
    if resized.ndim != 3 or freq_vp.ndim != 3 or resized.shape[0] != freq_vp.shape[0]:
        raise DimensionError(
            f"channel mismatch: image {resized.shape}, prompt {freq_vp.shape}"
        )
    if freq_vp.shape[1] > resized.shape[1] or freq_vp.shape[2] > resized.shape[2]:
        raise DimensionError("frequency prompt larger than the resized image")
    block = embed_low_frequency(dct2(freq_vp), resized.shape[-2:])
    return clamp01(idct2(dct2(resized) + sigmoid(freq_scale) * block))


def mask_center(spatial_vp, geom):
    """Zero the centered resized-image window of the spatial prompt."""
    spatial_vp = np.asarray(spatial_vp, dtype=np.float64)
    if spatial_vp.shape != geom.oracle_shape:
        raise DimensionError(
            f"spatial prompt shape {spatial_vp.shape} != {geom.oracle_shape}"
        )
    oy = (geom.full_h - geom.resized_h) // 2
    ox = (geom.full_w - geom.resized_w) // 2
    masked = spatial_vp.copy()
    masked[:, oy:oy + geom.resized_h, ox:ox + geom.resized_w] = 0.0
    return masked


def apply_spatial_prompt(prompted_resized, spatial_vp, geom):
    """Pad the (frequency-prompted) image to the full canvas and add the
    center-masked spatial prompt around it; clamp to [0, 1]."""
    prompted_resized = np.asarray(prompted_resized, dtype=np.float64)
    if prompted_resized.shape != (geom.channels, geom.resized_h, geom.resized_w):
        raise DimensionError(
            f"resized image shape {prompted_resized.shape} != "
            f"{(geom.channels, geom.resized_h, geom.resized_w)}"
        )
    padded = center_pad(prompted_resized, geom.full_h, geom.full_w)
    return clamp01(padded + mask_center(spatial_vp, geom))


def prompt(params, geom, image):
    """Full prompting pipeline for one image of any spatial size.

    Resize -> decode prompts -> frequency injection -> framed spatial prompt.
    Output is (channels, full_h, full_w) with values in [0, 1].
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != geom.channels:
        raise DimensionError(f"expected ({geom.channels}, h, w) image, got {image.shape}")
    resized = bilinear_resize(image, geom.resized_h, geom.resized_w)
    pair = decode(params, geom)
    prompted = apply_frequency_prompt(resized, pair.freq_vp, params.freq_scale)
    return apply_spatial_prompt(prompted, pair.spatial_vp, geom)


@dataclass(frozen=True)
class PreparedBatch:
    """Parameter-independent per-batch precomputation for repeated prompting.

    The resized images and their DCT grids do not depend on prompter params,
    so a training step evaluating many perturbations reuses them.
    """

    geom: Geometry
    resized: np.ndarray  # (n, channels, resized_h, resized_w)
    coeffs: np.ndarray   # dct2 of resized


def prepare_batch(images, geom):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != geom.channels:
        raise DimensionError(f"expected (n, {geom.channels}, h, w), got {images.shape}")
    resized = bilinear_resize(images, geom.resized_h, geom.resized_w)
    return PreparedBatch(geom=geom, resized=resized, coeffs=dct2(resized))


def prompt_prepared(prepared, params, pair=None):
    """Apply prompts from `params` to a prepared batch; decodes once."""
    geom = prepared.geom
    if pair is None:
        pair = decode(params, geom)
    block = embed_low_frequency(dct2(pair.freq_vp), (geom.resized_h, geom.resized_w))
    prompted = clamp01(idct2(prepared.coeffs + sigmoid(params.freq_scale) * block[None]))
    padded = center_pad(prompted, geom.full_h, geom.full_w)
    return clamp01(padded + mask_center(pair.spatial_vp, geom)[None])
