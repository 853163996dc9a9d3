"""Composite retrieval model: frozen dual encoder + trainable prompt blocks.

The forward path for a batch of images follows the dependency chain
patches -> text prompt rows -> per-class text forwards -> layer-specific
visual rows, then runs the prompted vision encoder.  Per-class text features
fall out of the same text forwards and feed the classification loss.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoders import (ModelDims, TextEncoder, Tokenizer, VisionEncoder,
                       TEMPLATES)
from .jigsaw import JigsawSolver, PermutationTable, build_table
from .prompting import (PromptBundle, TextualToVisualMapper,
                        VisionTextConjunction, VisualToTextualMapper)

PROMPTING_MODES = ("bidirectional", "text-only", "vision-only", "unidirectional")


def template_for(modality, protocol):
    """Hard prompt template for an image modality under a protocol."""
    if protocol == "fg":
        return "visual representation of"
    return "sketch of a" if modality == "sketch" else "photo of a"


class SketchPhotoModel:
    def __init__(self, dims: ModelDims, class_names, m=4, n=2, bottleneck=None,
                 prompt_depth=None, prompting_mode="bidirectional",
                 jigsaw_grid=2, jigsaw_perms=None, solver_layers=2, seed=0,
                 semantic_rows=None):
        if prompting_mode not in PROMPTING_MODES:
            raise ValueError(f"unknown prompting mode: {prompting_mode!r}")
        n_context = len(next(iter(TEMPLATES.values())))
        if not 0 <= m <= n_context:
            raise ValueError(f"m must be between 0 and {n_context}")
        if semantic_rows is None:
            semantic_rows = n_context
        if not 0 <= semantic_rows <= n_context:
            raise ValueError(f"semantic_rows must be between 0 and {n_context}")
        self.dims = dims
        self.class_names = list(class_names)
        self.m = m
        self.n = n
        self.prompt_depth = dims.layers if prompt_depth is None else prompt_depth
        self.prompting_mode = prompting_mode
        self.semantic_rows = semantic_rows
        self.seed = seed

        self.tokenizer = Tokenizer(self.class_names, dims.seq_len)
        self.text = TextEncoder(dims, self.tokenizer, seed=seed)
        self.vision = VisionEncoder(dims, seed=seed)
        self.map_t = VisualToTextualMapper(dims.d_v, dims.d_t, m, seed=seed)
        self.map_v = TextualToVisualMapper(dims.d_t, dims.d_v, seed=seed)
        self.map_vt = VisionTextConjunction(dims.d_t, dims.d_v, n, bottleneck, seed=seed)
        self.table = build_table(jigsaw_grid, jigsaw_perms, seed=seed)
        self.solver = JigsawSolver(dims.d_e, self.table, layers=solver_layers, seed=seed)
        # free text prompt rows for the MaPLe-style unidirectional baseline;
        # only trainable when that mode is active
        rng = np.random.default_rng(np.random.SeedSequence([seed, 505]))
        self.free_text_prompt = Parameter(
            rng.normal(0.0, 0.02, size=(m, dims.d_t)),
            prompting_mode == "unidirectional", "free_text_prompt",
        )

    # -- parameter plumbing --------------------------------------------------

    def parameters(self):
        return (self.text.parameters() + self.vision.parameters()
                + self.map_t.parameters() + self.map_v.parameters()
                + self.map_vt.parameters() + self.solver.parameters()
                + [self.free_text_prompt])

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def frozen_checksum(self):
        h = hashlib.sha256()
        for p in self.parameters():
            if not p.trainable:
                h.update(p.name.encode())
                h.update(np.ascontiguousarray(p.value.data).tobytes())
        return h.hexdigest()

    def state_dict(self):
        return {p.name: p.value.data.copy() for p in self.trainable_parameters()}

    def load_state_dict(self, state):
        for p in self.trainable_parameters():
            p.value.data = np.array(state[p.name], dtype=np.float64)

    def zero_grad(self):
        for p in self.parameters():
            p.value.zero_grad()

    # -- text side -----------------------------------------------------------

    def context_word_rows(self, template) -> Tensor:
        """Embedding rows of the template's context words (class slot excluded)."""
        ids = np.array([self.tokenizer._id(w) for w in TEMPLATES[template]])
        return self.text.embed.value[ids]

    def derive_text_prompts(self, e0: Tensor) -> Tensor:
        return self.map_t(e0)

    def class_name_features(self, class_names) -> Tensor:
        """Image-independent class-name embeddings used by the adaptive margin.

        Bare class prompts with the m prompt slots zeroed; returns (C, d_e).
        """
        prompts = [self._bare_prompt(c) for c in class_names]
        w0 = self.text.embed_prompts(prompts)
        zeros = Tensor(np.zeros((len(prompts), self.m, self.dims.d_t)))
        _, feat = self.text.forward(
            w0, zeros if self.m else None, eos_pos=prompts[0].eos_pos,
            depth=self.prompt_depth,
        )
        return feat

    def _bare_prompt(self, class_name):
        tok = self.tokenizer
        ids = ([tok.START] + [tok.PAD] * self.m
               + [tok._id(class_name), tok.END])
        if len(ids) > self.dims.seq_len:
            raise ValueError("sequence too short for the bare class prompt")
        ids = ids + [tok.PAD] * (self.dims.seq_len - len(ids))
        from .encoders import TokenizedPrompt
        return TokenizedPrompt(np.array(ids, np.int64), None, class_name,
                               class_pos=1 + self.m, eos_pos=2 + self.m)

    # -- full prompted forward -----------------------------------------------

    def encode_images(self, images, template, class_names, hook=None):
        """Embed a batch of images with the full bidirectional prompt chain.

        ``class_names`` defines the prompt set feeding the conjunction block
        and the per-class text features (seen classes only, at inference).
        Returns dict with f_v (B, d_e, unit rows), f_t (B, C, d_e), and the
        assembled bundle.
        """
        if not class_names:
            raise ValueError("empty class set")
        mode = self.prompting_mode
        dims = self.dims
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        batch = arr.shape[0]

        e0 = self.vision.patchify(arr)  # (B, N, d_v)

        # text prompt rows
        if mode in ("bidirectional", "text-only"):
            t_rows = self.derive_text_prompts(e0) if self.m else None  # (B, m, d_t)
        elif mode == "unidirectional":
            t_rows = ad.broadcast_to(
                ad.reshape(self.free_text_prompt.value, (1, self.m, dims.d_t)),
                (batch, self.m, dims.d_t),
            ) if self.m else None
        else:  # vision-only
            t_rows = None

        prompts = [self.tokenizer.tokenize(template, c) for c in class_names]
        w0 = self.text.embed_prompts(prompts)  # (C, M, d_t)
        c = len(prompts)
        w0_b = ad.broadcast_to(
            ad.reshape(w0, (1, c, dims.seq_len, dims.d_t)),
            (batch, c, dims.seq_len, dims.d_t),
        )
        t_b = None
        if t_rows is not None:
            t_b = ad.broadcast_to(
                ad.reshape(t_rows, (batch, 1, self.m, dims.d_t)),
                (batch, c, self.m, dims.d_t),
            )
        eos = prompts[0].eos_pos
        layer_outs, f_t = self.text.forward(
            w0_b, t_b, eos_pos=eos, depth=self.prompt_depth, hook=hook
        )

        # visual prompt rows
        bundle = PromptBundle(t_rows, None, None)
        if mode in ("bidirectional", "vision-only", "unidirectional"):
            if self.semantic_rows:
                rows = self.context_word_rows(template)[: self.semantic_rows]
                vtg = self.map_v(rows)  # (semantic_rows, d_v)
                jm1 = vtg.shape[0]
                bundle.semantic_visual = ad.broadcast_to(
                    ad.reshape(vtg, (1, jm1, dims.d_v)), (batch, jm1, dims.d_v)
                )
            bundle.layer_visual = [
                self.map_vt(out[..., eos, :]) for out in layer_outs
            ] if self.n else None
        vis_prompts = bundle.visual_per_layer(dims.layers)
        f_v = self.vision.forward(e0, vis_prompts, depth=self.prompt_depth, hook=hook)
        return {"f_v": f_v, "f_t": f_t, "bundle": bundle, "e0": e0}
