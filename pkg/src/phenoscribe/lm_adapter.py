"""Tiny causal LM over bytes + landmark symbols, with LoRA and P-tuning.

Stage order mirrors the two-stage recipe: optional from-scratch base
pretraining, cross-modal LoRA fine-tuning (transcript -> landmarks), then
P-tuning a soft prompt and a 3-way classifier head with the base and LoRA
frozen.  The last-position hidden state doubles as the text+landmark
embedding for the fusion model.
"""
from __future__ import annotations

import numpy as np

from .config import ModelConfig, TrainConfig
from .errors import EmptyCorpus, EmptyInput, RankTooLarge
from .landmarks import SYMBOLS
from .mtl_loss import mtl_objective
from .nn import Adam, Linear, Module, Parameter, TransformerEncoder, concat, no_grad
from .nn.layers import LayerNorm, causal_mask, sinusoidal_positions, uniform_init

PAD, BOS, EOS, SEP = 0, 1, 2, 3
CONTROL = ("<pad>", "<bos>", "<eos>", "<sep>")
LANDMARK_BASE = len(CONTROL)
BYTE_BASE = LANDMARK_BASE + len(SYMBOLS)
VOCAB_SIZE = BYTE_BASE + 256

INSTRUCTIONS = {"v1": "map the acoustic landmarks for this transcript: "}


class Vocab:
    """Dense ids: 4 control tokens, 12 landmark symbols, then 256 raw bytes."""

    size = VOCAB_SIZE

    def __init__(self):
        self.token_to_id = {t: i for i, t in enumerate(CONTROL)}
        self.token_to_id.update({s: LANDMARK_BASE + i for i, s in enumerate(SYMBOLS)})
        self.token_to_id.update({bytes([b]): BYTE_BASE + b for b in range(256)})
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        return VOCAB_SIZE

    @staticmethod
    def encode_text(text: str) -> list:
        return [BYTE_BASE + b for b in text.encode("utf-8")]

    @staticmethod
    def decode_text(ids) -> str:
        return bytes(i - BYTE_BASE for i in ids if i >= BYTE_BASE).decode("utf-8", errors="replace")

    @staticmethod
    def encode_landmarks(symbols) -> list:
        if isinstance(symbols, str):
            symbols = symbols.split()
        return [LANDMARK_BASE + SYMBOLS.index(s) for s in symbols]

    @staticmethod
    def is_landmark(i) -> bool:
        return LANDMARK_BASE <= i < BYTE_BASE


VOCAB = Vocab()


class LoRAAdapter(Module):
    """Low-rank additive update ``(alpha / r) * (x @ A) @ B`` with B starting at zero."""

    def __init__(self, d_in, d_out, r, alpha, rng):
        if r > min(d_in, d_out):
            raise RankTooLarge(f"rank {r} exceeds min({d_in}, {d_out})")
        self.r, self.alpha = r, alpha
        self.A = Parameter(uniform_init(rng, d_in, (d_in, r)), "A")
        self.B = Parameter(np.zeros((r, d_out)), "B")

    @property
    def scale(self):
        return self.alpha / self.r

    def delta(self, x):
        return ((x @ self.A) @ self.B) * self.scale


def lora_forward(layer: Linear, adapter, x):
    y = layer(x)
    return y if adapter is None else y + adapter.delta(x)


def merged_weight(layer: Linear, adapter) -> np.ndarray:
    if adapter is None:
        return layer.W.data.copy()
    return layer.W.data + adapter.scale * (adapter.A.data @ adapter.B.data)


class TinyLM(Module):
    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        self.d_model = d
        # unit-variance rows, on the same scale as the positional code
        self.tok_emb = Parameter(rng.standard_normal((VOCAB_SIZE, d)), "tok_emb")
        self.encoder = TransformerEncoder(d, cfg.n_layers, cfg.n_heads, cfg.d_ff, rng)
        self.ln_f = LayerNorm(d)
        self.head = Linear(d, VOCAB_SIZE, rng)

    def embed_tokens(self, ids):
        return self.tok_emb[np.asarray(ids, dtype=np.int64)]

    def hidden(self, x):
        """(B, T, d) input embeddings -> last-block hidden states under a causal mask."""
        t = x.shape[1]
        x = x + sinusoidal_positions(t, self.d_model)
        return self.encoder(x, causal_mask(t))

    def logits(self, h):
        return self.head(self.ln_f(h))

    def attention_layers(self):
        return [blk.attn for blk in self.encoder.blocks]


def attach_lora(lm: TinyLM, r, alpha, targets, rng) -> list:
    """Attach adapters to the named projections of every attention layer; r = 0 attaches nothing."""
    adapters = []
    if r == 0:
        return adapters
    for attn in lm.attention_layers():
        for name in targets:
            layer = getattr(attn, name)
            attn.adapters[name] = LoRAAdapter(layer.d_in, layer.d_out, r, alpha, rng)
            adapters.append(attn.adapters[name])
    return adapters


class PromptEmbedding(Module):
    def __init__(self, p, d, rng):
        self.P = Parameter(rng.standard_normal((p, d)), "P")

    def __len__(self):
        return self.P.shape[0]


class ClassifierHead(Module):
    def __init__(self, d, rng, n_tasks=3):
        self.fc = Linear(d, n_tasks, rng)

    def forward(self, h):
        return self.fc(h)


class PhenoLM(Module):
    """TinyLM plus its adapters, soft prompt and classifier, with stage-aware naming."""

    def __init__(self, cfg: ModelConfig, seed: int):
        rng = np.random.default_rng([seed, 11])
        self.cfg = cfg
        self.lm = TinyLM(cfg, rng)
        self.prompt = PromptEmbedding(cfg.prompt_len, cfg.d_model, rng) if cfg.prompt_len else None
        self.clf = ClassifierHead(cfg.d_model, rng)
        self._lora_rng = np.random.default_rng([seed, 12])

    def named_parameters(self, prefix=""):
        for name, p in self.lm.named_parameters():
            yield ("lora." if ".adapters." in name else "lm.") + name, p
        if self.prompt is not None:
            yield from self.prompt.named_parameters("prompt.")
        yield from self.clf.named_parameters("clf.")

    def group(self, prefix):
        return [p for n, p in self.named_parameters() if n.startswith(prefix)]

    def attach_lora(self):
        if not self.has_lora:
            attach_lora(self.lm, self.cfg.lora_r, self.cfg.lora_alpha, self.cfg.lora_targets, self._lora_rng)

    @property
    def has_lora(self):
        return any(attn.adapters for attn in self.lm.attention_layers())

    def set_trainable(self, prefixes) -> None:
        """Freeze everything except parameters whose checkpoint name starts with one of ``prefixes``."""
        for name, p in self.named_parameters():
            if name.startswith(tuple(prefixes)):
                p.unfreeze()
            else:
                p.freeze()

    # -- sequences -----------------------------------------------------------
    def _text_ids(self, transcript):
        ids = VOCAB.encode_text(transcript)[: self.cfg.max_text_tokens]
        return ids

    def _landmark_ids(self, landmarks):
        return VOCAB.encode_landmarks(landmarks)[: self.cfg.max_landmark_tokens]

    def stage1_ids(self, transcript, landmarks):
        """``BOS <instruction> <transcript> SEP <landmarks> EOS`` and the SEP index."""
        head = [BOS] + VOCAB.encode_text(INSTRUCTIONS[self.cfg.instruction_version]) + self._text_ids(transcript)
        return head + [SEP] + self._landmark_ids(landmarks) + [EOS], len(head)

    def classify_ids(self, transcript, landmarks=None):
        """``<task prompt> <transcript> SEP [<landmarks>]``."""
        ids = VOCAB.encode_text(self.cfg.task_prompt) + self._text_ids(transcript) + [SEP]
        if landmarks is not None:
            ids += self._landmark_ids(landmarks)
        return ids

    # -- forward passes ------------------------------------------------------
    def lm_logits(self, batch_ids):
        ids, _ = pad_batch(batch_ids)
        return self.lm.logits(self.lm.hidden(self.lm.embed_tokens(ids)))

    def features(self, batch_ids):
        """Hidden state at the final real position, with the soft prompt prepended."""
        if not batch_ids or any(len(s) == 0 for s in batch_ids):
            raise EmptyInput("cannot embed an empty token sequence")
        ids, lengths = pad_batch(batch_ids)
        x = self.lm.embed_tokens(ids)
        offset = 0
        if self.prompt is not None:
            b = ids.shape[0]
            p = self.prompt.P.reshape(1, *self.prompt.P.shape) + np.zeros((b, 1, 1), dtype=x.data.dtype)
            x = concat([p, x], axis=1)
            offset = len(self.prompt)
        h = self.lm.hidden(x)
        return h[np.arange(len(batch_ids)), lengths - 1 + offset]

    def class_probs(self, batch_ids):
        return self.clf(self.features(batch_ids)).sigmoid()


def pad_batch(seqs):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max()) if len(seqs) else 0), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i: i + size] for i in range(0, n, size)]


def next_token_loss(model: PhenoLM, seqs, starts):
    """Mean cross-entropy of predicting token i+1 for positions i >= start (per sequence)."""
    ids, lengths = pad_batch(seqs)
    logp = model.lm_logits(seqs).log_softmax(axis=-1)
    rows, cols, targets = [], [], []
    for b, (n, s) in enumerate(zip(lengths, starts)):
        pos = np.arange(s, n - 1)
        rows.append(np.full(pos.size, b))
        cols.append(pos)
        targets.append(ids[b, pos + 1])
    rows, cols, targets = (np.concatenate(a) for a in (rows, cols, targets))
    picked = logp[rows, cols, targets]
    return -picked.mean()


def pretrain_base(model: PhenoLM, texts, epochs, tcfg: TrainConfig, seed: int, landmark_streams=()):
    """From-scratch next-token training of the base LM.

    The corpus is plain transcripts plus, optionally, unpaired landmark
    streams (``BOS SEP <landmarks> EOS``) so the landmark tokens are not
    dead rows of the vocabulary before adapters are trained.  Pairing a
    transcript with its landmarks is left to the adapters.
    """
    if not texts and not landmark_streams:
        raise EmptyCorpus("no transcripts to pretrain on")
    model.set_trainable(["lm."])
    opt = Adam(model.group("lm."), lr=tcfg.pretrain_lr)
    rng = np.random.default_rng([seed, 21])
    seqs = [[BOS] + model._text_ids(t) + [EOS] for t in texts]
    seqs += [[BOS, SEP] + model._landmark_ids(lms) + [EOS] for lms in landmark_streams]
    history = []
    for _ in range(epochs):
        for idx in _batches(len(seqs), tcfg.lm_batch, rng):
            opt.zero_grad()
            loss = next_token_loss(model, [seqs[i] for i in idx], [0] * len(idx))
            loss.backward()
            opt.step()
            history.append(loss.item())
    model.freeze()
    return history


def crossmodal_finetune(model: PhenoLM, corpus, epochs, tcfg: TrainConfig, seed: int):
    """Train LoRA adapters to emit the landmark sequence for a transcript.

    ``corpus`` holds (transcript, landmark symbols) pairs.  Only positions
    after SEP contribute to the loss; everything but ``lora.*`` is frozen.
    """
    if not corpus:
        raise EmptyCorpus("no (transcript, landmarks) pairs")
    model.attach_lora()
    model.set_trainable(["lora."])
    opt = Adam(model.group("lora."), lr=tcfg.crossmodal_lr)
    rng = np.random.default_rng([seed, 22])
    built = [model.stage1_ids(t, lms) for t, lms in corpus]
    history = []
    for _ in range(epochs):
        for idx in _batches(len(built), tcfg.crossmodal_batch, rng):
            opt.zero_grad()
            loss = next_token_loss(model, [built[i][0] for i in idx], [built[i][1] for i in idx])
            loss.backward()
            opt.step()
            history.append(loss.item())
    return history


def landmark_accuracy(model: PhenoLM, corpus) -> float:
    """Greedy next-token accuracy on positions after SEP (teacher forced)."""
    correct = total = 0
    with no_grad():
        for t, lms in corpus:
            ids, sep = model.stage1_ids(t, lms)
            pred = model.lm_logits([ids]).data[0].argmax(axis=-1)
            target = np.asarray(ids[sep + 1:])
            correct += int((pred[sep: len(ids) - 1] == target).sum())
            total += target.size
    return correct / total if total else 0.0


def p_tune(model: PhenoLM, examples, epochs, tcfg: TrainConfig, seed: int, w_plus=(1.0, 1.0, 1.0), lambda_aux=None):
    """Train the soft prompt and classifier head under the multi-task loss.

    ``examples`` holds (transcript, landmarks or None, labels[3]).  Base and
    LoRA weights stay frozen.
    """
    if not examples:
        raise EmptyCorpus("no labelled visits")
    lambda_aux = tcfg.lambda_aux if lambda_aux is None else lambda_aux
    model.set_trainable(["prompt.", "clf."])
    opt = Adam(model.group("prompt.") + model.group("clf."), lr=tcfg.ptune_lr)
    rng = np.random.default_rng([seed, 23])
    seqs = [model.classify_ids(t, lm) for t, lm, _ in examples]
    labels = np.array([y for _, _, y in examples], dtype=float)
    history = []
    for _ in range(epochs):
        for idx in _batches(len(seqs), tcfg.lm_batch, rng):
            opt.zero_grad()
            probs = model.class_probs([seqs[i] for i in idx])
            loss = mtl_objective(labels[idx], probs, w_plus, lambda_aux)
            loss.backward()
            opt.step()
            history.append(loss.item())
    model.freeze()
    return history


def trainable_count(model: PhenoLM) -> int:
    return int(sum(p.size for p in model.parameters() if not p.frozen))


def embed_many(model: PhenoLM, items, batch=32) -> np.ndarray:
    """(transcript, landmarks or None) pairs -> (N, d_model) embeddings."""
    out = []
    with no_grad():
        for i in range(0, len(items), batch):
            chunk = [model.classify_ids(t, lm) for t, lm in items[i: i + batch]]
            out.append(model.features(chunk).data.copy())
    return np.concatenate(out) if out else np.zeros((0, model.lm.d_model))


def embed(model: PhenoLM, transcript, landmarks=None) -> np.ndarray:
    if not transcript and not landmarks:
        raise EmptyInput("empty transcript and landmarks")
    return embed_many(model, [(transcript, landmarks)])[0]


def predict_probs(model: PhenoLM, items, batch=32) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(items), batch):
            chunk = [model.classify_ids(t, lm) for t, lm in items[i: i + batch]]
            out.append(model.class_probs(chunk).data.copy())
    return np.concatenate(out) if out else np.zeros((0, 3))
