"""Undo-instruction reasoner: SVO serialization of label sets, the two
sequence-to-sequence fine-tuning tasks (target-label prediction and
instruction generation), a small GRU encoder-decoder trained from scratch
over the closed vocabulary, and the exact symbolic undo oracle the learned
model is measured against.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .domain import NONE_ID, Op, category_name
from .errors import ParseError, SequenceOverflow, UndoParseFailure
from .instparse import (
    GEN_INSTRUCTION_PREFIX,
    PREDICT_LABELS_PREFIX,
    SEPARATOR,
    Instruction,
    LocPhrase,
    Vocab,
    parse,
)

# Worst-case instruction-generation input is 56 tokens (two 5-category label
# sentences plus prefix, separators and locative clause), so 48 is too tight.
MAX_LEN = 64

LabelSet = frozenset[int]


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) > MAX_LEN:
            raise SequenceOverflow(f"{len(self.ids)} tokens > {MAX_LEN}")

    def __len__(self) -> int:
        return len(self.ids)


def symbolic_undo(instr: Instruction) -> Instruction:
    """Exact inverse instruction; enabled by the closed DSL."""
    if instr.op is Op.ADD:
        return Instruction(op=Op.REMOVE, subject=instr.subject,
                           relation=instr.relation, anchor=instr.anchor)
    if instr.op is Op.REMOVE:
        return Instruction(op=Op.ADD, subject=instr.subject,
                           relation=instr.relation, anchor=instr.anchor)
    return Instruction(op=Op.CHANGE, subject=instr.new_category,
                       relation=instr.relation, anchor=instr.anchor,
                       new_category=instr.subject)


def labels_to_text(labels: LabelSet, role: str) -> str:
    """SVO text form of a label set, categories in canonical id order."""
    if role not in ("reference", "target"):
        raise ValueError(f"role must be reference/target, got {role!r}")
    if not labels:
        raise ValueError("label set must be nonempty")
    if any(c >= NONE_ID for c in labels):
        raise ValueError("image label sets never contain the dummy category")
    names = ", ".join(category_name(c) for c in sorted(labels))
    return f"the labels for {role} image contains {names}"


def _encode(vocab: Vocab, text: str) -> TokenSequence:
    ids = [vocab.bos_id] + vocab.encode_text(text) + [vocab.eos_id]
    return TokenSequence(ids=tuple(ids))


def _labels_text_maybe_shuffled(labels: LabelSet, role: str,
                                rng: random.Random | None) -> str:
    if rng is None:
        return labels_to_text(labels, role)
    order = sorted(labels)
    rng.shuffle(order)
    names = ", ".join(category_name(c) for c in order)
    return f"the labels for {role} image contains {names}"


def build_task_example(
    task: str,
    labels_r: LabelSet,
    labels_t: LabelSet,
    instruction: Instruction,
    loc: LocPhrase,
    vocab: Vocab | None = None,
    label_rng: random.Random | None = None,
) -> tuple[TokenSequence, TokenSequence]:
    """Input/output sequences for one fine-tuning task.

    ``label_rng`` randomizes the category order inside the *input* label
    sentences (training-time robustness); outputs stay canonical.
    """
    vocab = vocab or Vocab.default()
    t_or = _labels_text_maybe_shuffled(labels_r, "reference", label_rng)
    t_ot = _labels_text_maybe_shuffled(labels_t, "target", label_rng)
    sep = f" {SEPARATOR} "
    if task == "predict_labels":
        inp = f"{PREDICT_LABELS_PREFIX} {t_or}{sep}{instruction.surface}"
        out = labels_to_text(labels_t, "target")
    elif task == "gen_instruction":
        inp = (f"{GEN_INSTRUCTION_PREFIX} {t_or}{sep}{t_ot}{sep}{loc.surface}")
        out = instruction.surface
    else:
        raise ValueError(f"unknown task {task!r}")
    return _encode(vocab, inp), _encode(vocab, out)


def build_undo_query(labels_r: LabelSet, labels_t: LabelSet, loc: LocPhrase,
                     vocab: Vocab | None = None) -> TokenSequence:
    """Instruction-generation query with reference/target label roles swapped."""
    vocab = vocab or Vocab.default()
    t_ref = labels_to_text(labels_t, "reference")
    t_tgt = labels_to_text(labels_r, "target")
    sep = f" {SEPARATOR} "
    inp = f"{GEN_INSTRUCTION_PREFIX} {t_ref}{sep}{t_tgt}{sep}{loc.surface}"
    return _encode(vocab, inp)


# --- model ---------------------------------------------------------------------

HIDDEN = 128
LAYERS = 2


class Seq2Seq(nn.Module):
    """Bidirectional-GRU encoder, GRU decoder with dot-product attention.

    The encoder is bidirectional so the decoder's initial state still sees the
    task prefix at the head of long inputs.
    """

    def __init__(self, vocab_size: int, hidden: int = HIDDEN,
                 layers: int = LAYERS):
        super().__init__()
        if hidden % 2:
            raise ValueError("hidden width must be even")
        self.embed = nn.Embedding(vocab_size, hidden, padding_idx=0)
        self.encoder = nn.GRU(hidden, hidden // 2, num_layers=layers,
                              batch_first=True, bidirectional=True)
        self.enc_to_dec = nn.Linear(hidden, hidden)
        self.decoder = nn.GRU(hidden, hidden, num_layers=layers,
                              batch_first=True)
        self.attn_combine = nn.Linear(2 * hidden, hidden)
        self.out = nn.Linear(hidden, vocab_size)

    def encode(self, src: torch.Tensor):
        mask = src.ne(0)
        lengths = mask.sum(1).cpu()
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embed(src), lengths, batch_first=True, enforce_sorted=False)
        enc_packed, h = self.encoder(packed)
        enc_out, _ = nn.utils.rnn.pad_packed_sequence(
            enc_packed, batch_first=True, total_length=src.size(1))
        layers = h.size(0) // 2
        h = h.view(layers, 2, h.size(1), h.size(2))
        h = torch.tanh(self.enc_to_dec(torch.cat([h[:, 0], h[:, 1]], dim=-1)))
        return enc_out, h.contiguous(), mask

    def _attend(self, dec_out, enc_out, mask):
        scores = torch.bmm(dec_out, enc_out.transpose(1, 2))
        scores = scores / enc_out.size(-1) ** 0.5
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        ctx = torch.bmm(torch.softmax(scores, dim=-1), enc_out)
        fused = torch.tanh(self.attn_combine(torch.cat([dec_out, ctx], -1)))
        return self.out(fused)

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for every target position."""
        enc_out, h, mask = self.encode(src)
        dec_out, _ = self.decoder(self.embed(tgt_in), h)
        return self._attend(dec_out, enc_out, mask)

    @torch.no_grad()
    def greedy_decode(self, src: torch.Tensor, bos: int, eos: int,
                      max_len: int = MAX_LEN) -> list[list[int]]:
        """Batched greedy decoding until EOS (EOS excluded from the output)."""
        b = src.size(0)
        enc_out, h, mask = self.encode(src)
        tok = torch.full((b, 1), bos, dtype=torch.long, device=src.device)
        done = torch.zeros(b, dtype=torch.bool)
        seqs: list[list[int]] = [[] for _ in range(b)]
        # leave room for BOS/EOS framing of the decoded sequence
        for _ in range(max_len - 2):
            dec_out, h = self.decoder(self.embed(tok), h)
            logits = self._attend(dec_out, enc_out, mask)[:, -1]
            tok = logits.argmax(dim=-1, keepdim=True)
            for i in range(b):
                if not done[i]:
                    t = int(tok[i, 0])
                    if t == eos:
                        done[i] = True
                    else:
                        seqs[i].append(t)
            if bool(done.all()):
                break
        return seqs


@dataclass
class ReasonerParams:
    model: Seq2Seq
    vocab: Vocab

    def state_dict(self) -> dict:
        return self.model.state_dict()


def _pad_batch(seqs: list[TokenSequence], pad: int) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = torch.tensor(s.ids, dtype=torch.long)
    return out


def task_losses(params: ReasonerParams,
                batches: dict[str, tuple[torch.Tensor, torch.Tensor]]
                ) -> dict[str, torch.Tensor]:
    """Per-task teacher-forcing cross-entropy; the training objective is their
    sum, reported separately so the decomposition is checkable."""
    losses = {}
    for task, (src, tgt) in batches.items():
        logits = params.model(src, tgt[:, :-1])
        losses[task] = F.cross_entropy(
            logits.reshape(-1, logits.size(-1)), tgt[:, 1:].reshape(-1),
            ignore_index=params.vocab.pad_id)
    return losses


@dataclass
class ReasonerConfig:
    seed: int = 0
    epochs: int = 14
    batch_size: int = 32
    lr: float = 2e-3
    hidden: int = HIDDEN
    layers: int = LAYERS
    shuffle_input_labels: bool = True


def _samples_to_pairs(samples, vocab: Vocab, label_rng: random.Random | None):
    from .instparse import extract_loc

    pairs = {"gen_instruction": [], "predict_labels": []}
    for s in samples:
        loc = extract_loc(s.instruction)
        for task in pairs:
            inp, out = build_task_example(
                task, s.labels_r, s.labels_t, s.instruction, loc, vocab,
                label_rng=label_rng)
            pairs[task].append((inp, out))
    return pairs


def train_reasoner(samples, config: ReasonerConfig | None = None,
                   log=None) -> tuple[ReasonerParams, list[dict]]:
    """Train on both tasks mixed 1:1; returns params and the loss curve."""
    config = config or ReasonerConfig()
    vocab = Vocab.default()
    torch.manual_seed(config.seed)
    model = Seq2Seq(len(vocab), config.hidden, config.layers)
    params = ReasonerParams(model=model, vocab=vocab)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    curve: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order_rng = random.Random(f"{config.seed}:order:{epoch}")
        label_rng = (random.Random(f"{config.seed}:labels:{epoch}")
                     if config.shuffle_input_labels else None)
        pairs = _samples_to_pairs(samples, vocab, label_rng)
        idx = list(range(len(samples)))
        order_rng.shuffle(idx)
        for lo in range(0, len(idx), config.batch_size):
            chunk = idx[lo:lo + config.batch_size]
            batches = {}
            for task in ("gen_instruction", "predict_labels"):
                src = _pad_batch([pairs[task][i][0] for i in chunk],
                                 vocab.pad_id)
                tgt = _pad_batch([pairs[task][i][1] for i in chunk],
                                 vocab.pad_id)
                batches[task] = (src, tgt)
            losses = task_losses(params, batches)
            total = losses["gen_instruction"] + losses["predict_labels"]
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"reasoner loss diverged at step {step}: {losses}")
            opt.zero_grad()
            total.backward()
            opt.step()
            rec = {"step": step, "epoch": epoch,
                   "loss": float(total.detach()),
                   "loss_gen_instruction":
                       float(losses["gen_instruction"].detach()),
                   "loss_predict_labels":
                       float(losses["predict_labels"].detach())}
            curve.append(rec)
            if log is not None:
                log(rec)
            step += 1
    model.eval()
    return params, curve


def infer(params: ReasonerParams, inp: TokenSequence) -> TokenSequence:
    """Greedy decode of a single query."""
    src = _pad_batch([inp], params.vocab.pad_id)
    ids = params.model.greedy_decode(src, params.vocab.bos_id,
                                     params.vocab.eos_id)[0]
    return TokenSequence(ids=tuple([params.vocab.bos_id] + ids +
                                   [params.vocab.eos_id]))


def infer_batch(params: ReasonerParams,
                inputs: list[TokenSequence]) -> list[list[int]]:
    src = _pad_batch(inputs, params.vocab.pad_id)
    return params.model.greedy_decode(src, params.vocab.bos_id,
                                      params.vocab.eos_id)


def decode_text(params: ReasonerParams, seq: TokenSequence) -> str:
    ids = [i for i in seq.ids
           if i not in (params.vocab.pad_id, params.vocab.bos_id,
                        params.vocab.eos_id)]
    return params.vocab.decode_text(ids)


def undo_instruction(params: ReasonerParams, labels_r: LabelSet,
                     labels_t: LabelSet, loc: LocPhrase) -> Instruction:
    """Infer the inverse instruction by querying the instruction-generation
    task with the label roles swapped."""
    query = build_undo_query(labels_r, labels_t, loc, params.vocab)
    out = infer(params, query)
    text = decode_text(params, out)
    try:
        return parse(text)
    except ParseError as exc:
        raise UndoParseFailure(f"decoded text {text!r} failed to parse") from exc
