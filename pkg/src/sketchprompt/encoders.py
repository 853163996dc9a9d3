"""Miniature frozen dual encoder: a text transformer and a vision transformer.

Both encoders keep their attention / MLP / embedding weights frozen at a
seeded random initialization; only the layer-norm gains and biases are
trainable.  Prompt tokens can be injected into every layer's input sequence:
on the text side a block of rows right after the start token is overwritten,
on the vision side dedicated slots between the class token and the patches
are rewritten each layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class TokenizationError(ValueError):
    pass


TEMPLATES = {
    "sketch of a": ["a", "sketch", "of", "a"],
    "photo of a": ["a", "photo", "of", "a"],
    "visual representation of": ["a", "visual", "representation", "of"],
}

# Every template carries 4 context words plus the class slot: 5 content tokens.
CONTENT_TOKENS = 5

BASE_WORDS = [
    "a", "of", "an", "image", "photo", "sketch", "visual", "representation",
]


@dataclass
class TokenizedPrompt:
    ids: np.ndarray            # length M int array, padded
    template_id: str | None
    class_name: str
    class_pos: int
    eos_pos: int


class Tokenizer:
    """Word-level tokenizer over a small fixed vocabulary.

    ``call_log`` records every class name tokenized; retrieval uses it to
    prove that inference never touches unseen class names.
    """

    PAD, START, END = 0, 1, 2

    def __init__(self, class_names, seq_len):
        self.seq_len = seq_len
        words = list(BASE_WORDS)
        for name in class_names:
            if name not in words:
                words.append(name)
        self.vocab = {"<pad>": 0, "<start>": 1, "<end>": 2}
        for w in words:
            self.vocab[w] = len(self.vocab)
        self.call_log = []

    @property
    def vocab_size(self):
        return len(self.vocab)

    def _id(self, word):
        if word not in self.vocab:
            raise TokenizationError(f"out-of-vocabulary word: {word!r}")
        return self.vocab[word]

    def tokenize(self, template, class_name):
        """``<start> w1 w2 w3 w4 CLS <end> <pad>...`` padded to seq_len."""
        if template not in TEMPLATES:
            raise TokenizationError(f"unknown template: {template!r}")
        self.call_log.append(class_name)
        words = TEMPLATES[template]
        ids = [self.START] + [self._id(w) for w in words] + [self._id(class_name), self.END]
        if len(ids) > self.seq_len:
            raise TokenizationError("prompt longer than the configured sequence length")
        ids = ids + [self.PAD] * (self.seq_len - len(ids))
        return TokenizedPrompt(
            ids=np.array(ids, dtype=np.int64),
            template_id=template,
            class_name=class_name,
            class_pos=1 + len(words),
            eos_pos=2 + len(words),
        )

    def tokenize_bare(self, class_name):
        """``<start> CLS <end>`` — used for class-name margin embeddings."""
        self.call_log.append(class_name)
        ids = [self.START, self._id(class_name), self.END]
        ids = ids + [self.PAD] * (self.seq_len - len(ids))
        return TokenizedPrompt(
            ids=np.array(ids, dtype=np.int64),
            template_id=None,
            class_name=class_name,
            class_pos=1,
            eos_pos=2,
        )


@dataclass
class ModelDims:
    layers: int = 4
    d_t: int = 64
    d_v: int = 64
    d_e: int = 32
    seq_len: int = 16          # M
    image_size: int = 32
    patch_size: int = 8
    heads: int = 4
    mlp_ratio: int = 2
    causal: bool = False

    @property
    def patches(self):
        side = self.image_size // self.patch_size
        return side * side


def _gauss(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


def _fan_in(rng, rows, cols, gain=1.0):
    # 1/sqrt(fan_in) keeps activations O(1) at desk-scale widths
    return rng.normal(0.0, gain * rows ** -0.5, size=(rows, cols))


# Frozen encoder weights are drawn above the unit-variance point.  Each
# residual block then adds a strongly mixed component, so with depth the
# frozen stack decorrelates its output from raw pixel geometry: an untrained
# model ranks near chance.  The trainable prompt rows are re-injected at
# every layer and reach the output through only the remaining layers, so
# the trained pathway keeps its signal.
FROZEN_GAIN = 2.0


def _ortho(rng, rows, cols):
    a = rng.normal(size=(rows, max(rows, cols)))
    q, _ = np.linalg.qr(a.T)
    return q.T[:rows, :cols] if cols <= q.shape[0] else q[:rows, :cols]


class _TransformerStack:
    """Shared layer machinery for both encoders (pre-LN residual blocks)."""

    def __init__(self, rng, prefix, layers, dim, heads, mlp_ratio, causal,
                 trainable_core=False, gain=1.0):
        self.layers = layers
        self.dim = dim
        self.heads = heads
        self.causal = causal
        self.blocks = []
        tc = trainable_core
        for i in range(layers):
            blk = {}
            for tag in ("q", "k", "v", "o"):
                blk[f"W{tag}"] = Parameter(_fan_in(rng, dim, dim, gain), tc, f"{prefix}.layer{i}.W{tag}")
                blk[f"b{tag}"] = Parameter(np.zeros(dim), tc, f"{prefix}.layer{i}.b{tag}")
            hidden = dim * mlp_ratio
            blk["W1"] = Parameter(_fan_in(rng, dim, hidden, gain), tc, f"{prefix}.layer{i}.W1")
            blk["b1"] = Parameter(np.zeros(hidden), tc, f"{prefix}.layer{i}.b1")
            blk["W2"] = Parameter(_fan_in(rng, hidden, dim, gain), tc, f"{prefix}.layer{i}.W2")
            blk["b2"] = Parameter(np.zeros(dim), tc, f"{prefix}.layer{i}.b2")
            for ln in ("ln1", "ln2"):
                blk[f"{ln}_g"] = Parameter(np.ones(dim), True, f"{prefix}.layer{i}.{ln}.gain")
                blk[f"{ln}_b"] = Parameter(np.zeros(dim), True, f"{prefix}.layer{i}.{ln}.bias")
            self.blocks.append(blk)

    def run_layer(self, x, i):
        blk = self.blocks[i]
        h = ad.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
        q = ad.add(ad.matmul(h, blk["Wq"].value), blk["bq"].value)
        k = ad.add(ad.matmul(h, blk["Wk"].value), blk["bk"].value)
        v = ad.add(ad.matmul(h, blk["Wv"].value), blk["bv"].value)
        att = ad.attention(q, k, v, self.heads, causal=self.causal)
        x = ad.add(x, ad.add(ad.matmul(att, blk["Wo"].value), blk["bo"].value))
        h = ad.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
        h = ad.relu(ad.add(ad.matmul(h, blk["W1"].value), blk["b1"].value))
        x = ad.add(x, ad.add(ad.matmul(h, blk["W2"].value), blk["b2"].value))
        return x

    def parameters(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.values())
        return out


class TextEncoder:
    """Frozen text transformer with optional deep prompt injection.

    The same prompt block T (m rows) overwrites positions 1..m of every
    layer's input, keeping the class-word and end positions intact.
    """

    def __init__(self, dims: ModelDims, tokenizer: Tokenizer, seed=0):
        self.dims = dims
        self.tokenizer = tokenizer
        rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        d = dims.d_t
        self.embed = Parameter(_gauss(rng, (tokenizer.vocab_size, d)), False, "text.embed")
        self.pos = Parameter(_gauss(rng, (dims.seq_len, d)), False, "text.pos")
        self.stack = _TransformerStack(
            rng, "text", dims.layers, d, dims.heads, dims.mlp_ratio, dims.causal,
            gain=FROZEN_GAIN,
        )
        self.ln_final_g = Parameter(np.ones(d), True, "text.ln_final.gain")
        self.ln_final_b = Parameter(np.zeros(d), True, "text.ln_final.bias")
        self.proj = Parameter(_ortho(rng, d, dims.d_e), False, "text.proj")

    def embed_prompt(self, prompt: TokenizedPrompt) -> Tensor:
        """Token embeddings plus positional embeddings, shape (M, d_t)."""
        return ad.add(self.embed.value[prompt.ids], self.pos.value)

    def embed_prompts(self, prompts) -> Tensor:
        """Stacked embeddings for a list of prompts, shape (len, M, d_t)."""
        ids = np.stack([p.ids for p in prompts])
        return ad.add(self.embed.value[ids], self.pos.value)

    def forward(self, w0: Tensor, prompt_tokens: Tensor | None = None,
                eos_pos: int | None = None, depth: int | None = None, hook=None):
        """Run the stack; returns (per-layer outputs, projected eos feature).

        ``w0``: (..., M, d_t).  ``prompt_tokens``: (..., m, d_t) or None;
        rows 1..m of each layer's input (down to ``depth`` layers) are
        overwritten with it.
        """
        dims = self.dims
        if depth is None:
            depth = dims.layers
        x = w0
        m = 0
        if prompt_tokens is not None:
            m = prompt_tokens.shape[-2]
            if m >= dims.seq_len:
                raise ValueError("prompt block does not fit in the sequence")
        outputs = []
        for i in range(dims.layers):
            if prompt_tokens is not None and i < depth:
                x = ad.concat(
                    [x[..., 0:1, :], prompt_tokens, x[..., 1 + m:, :]], axis=-2
                )
            if hook is not None:
                hook(i, "text", x.data.copy())
            x = self.stack.run_layer(x, i)
            outputs.append(x)
        if eos_pos is None:
            raise ValueError("eos_pos required to read the text feature")
        eos = x[..., eos_pos, :]
        feat = ad.matmul(ad.layer_norm(eos, self.ln_final_g, self.ln_final_b), self.proj.value)
        return outputs, feat

    def parameters(self):
        return [self.embed, self.pos, self.ln_final_g, self.ln_final_b,
                self.proj] + self.stack.parameters()


class VisionEncoder:
    """Frozen ViT with per-layer prompt slots between cls and the patches."""

    def __init__(self, dims: ModelDims, seed=0):
        self.dims = dims
        rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
        d = dims.d_v
        ps = dims.patch_size
        n = dims.patches
        self.patch_w = Parameter(_fan_in(rng, ps * ps, d, FROZEN_GAIN), False,
                                 "vision.patch_w")
        self.patch_b = Parameter(np.zeros(d), False, "vision.patch_b")
        self.cls = Parameter(_gauss(rng, (d,)), False, "vision.cls")
        # positional rows are the only carrier of patch order; at the usual
        # 0.02 they are invisible next to the O(1) patch tokens and the
        # permutation pretext has nothing to read, so the frozen rows are
        # drawn at a scale commensurate with the token energy
        self.pos = Parameter(_gauss(rng, (1 + n, d), std=0.5), False, "vision.pos")
        self.stack = _TransformerStack(
            rng, "vision", dims.layers, d, dims.heads, dims.mlp_ratio,
            causal=False, gain=FROZEN_GAIN,
        )
        self.ln_post_g = Parameter(np.ones(d), True, "vision.ln_post.gain")
        self.ln_post_b = Parameter(np.zeros(d), True, "vision.ln_post.bias")
        self.proj = Parameter(_ortho(rng, d, dims.d_e), False, "vision.proj")

    def patchify(self, images) -> Tensor:
        """(..., H, W) images -> (..., N, d_v) patch embeddings (row-major).

        Patch order matches the jigsaw tile indexing: index g_row * side +
        g_col over the patch grid.
        """
        dims = self.dims
        arr = images.data if isinstance(images, Tensor) else np.asarray(images, np.float64)
        h, w = arr.shape[-2], arr.shape[-1]
        ps = dims.patch_size
        if h % ps or w % ps:
            raise ValueError(f"image dims {h}x{w} not divisible by patch size {ps}")
        lead = arr.shape[:-2]
        gh, gw = h // ps, w // ps
        tiles = arr.reshape(lead + (gh, ps, gw, ps))
        tiles = np.moveaxis(tiles, -2, -3).reshape(lead + (gh * gw, ps * ps))
        return ad.add(ad.matmul(Tensor(tiles), self.patch_w.value), self.patch_b.value)

    def forward(self, e0: Tensor, prompts=None, depth: int | None = None, hook=None) -> Tensor:
        """(..., N, d_v) patches -> L2-normalized (..., d_e) cls feature.

        ``prompts``: list of L tensors (..., p, d_v) or None.  At each layer
        input (down to ``depth``) the p slot rows are overwritten; their
        previous outputs are discarded.
        """
        dims = self.dims
        if depth is None:
            depth = dims.layers
        lead = e0.shape[:-2]
        n = e0.shape[-2]
        if n != dims.patches:
            raise ValueError("patch count mismatch")
        e0 = ad.add(e0, self.pos.value[1:])
        cls_row = ad.broadcast_to(
            ad.reshape(ad.add(self.cls.value, self.pos.value[0]), (1, dims.d_v)),
            lead + (1, dims.d_v),
        )
        p = 0
        if prompts is not None:
            if len(prompts) != dims.layers:
                raise ValueError("need one prompt block per layer")
            p = prompts[0].shape[-2]
            for v in prompts:
                if v.shape[-2] != p or v.shape[-1] != dims.d_v:
                    raise ValueError("prompt rows must be p x d_v at every layer")
            x = ad.concat([cls_row, prompts[0], e0], axis=-2)
        else:
            x = ad.concat([cls_row, e0], axis=-2)
        for i in range(dims.layers):
            if prompts is not None and 0 < i < depth:
                x = ad.concat(
                    [x[..., 0:1, :], prompts[i], x[..., 1 + p:, :]], axis=-2
                )
            if hook is not None:
                hook(i, "vision", x.data.copy())
            x = self.stack.run_layer(x, i)
        cls_out = x[..., 0, :]
        feat = ad.matmul(
            ad.layer_norm(cls_out, self.ln_post_g, self.ln_post_b), self.proj.value
        )
        return ad.l2_normalize(feat, axis=-1)

    def parameters(self):
        return [self.patch_w, self.patch_b, self.cls, self.pos,
                self.ln_post_g, self.ln_post_b, self.proj] + self.stack.parameters()
