"""Two-stage image editor and its adversaries: a text-conditioned localizer
producing a soft spatial mask, an inpainter completing the masked image, a
discriminator with global/local real-fake heads and auxiliary classifier
heads, and a small frozen feature extractor standing in for a pretrained
backbone.

All forward passes are batch-independent (GroupNorm only) and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .domain import IMG_PX, N_CATEGORIES, NONE_ID
from .instparse import Instruction, LocPhrase, Vocab, extract_loc

TEXT_DIM = 64          # width of loc/how text embeddings
MASK_THRESHOLD = 0.5
LOCAL_CROP = 32


def _gn(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(4, ch), ch)


def encode_surfaces(vocab: Vocab, texts: list[str],
                    device=None) -> torch.Tensor:
    """Padded (B, T) id tensor for a batch of text surfaces."""
    ids = [vocab.encode_text(t) for t in texts]
    width = max(len(x) for x in ids)
    out = torch.full((len(ids), width), vocab.pad_id, dtype=torch.long,
                     device=device)
    for i, row in enumerate(ids):
        out[i, :len(row)] = torch.tensor(row, dtype=torch.long)
    return out


class TextEncoder(nn.Module):
    """Mean-pooled token embeddings projected to a fixed-width vector."""

    def __init__(self, vocab_size: int, dim: int = TEXT_DIM):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, dim, padding_idx=0)
        self.proj = nn.Linear(dim, dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        mask = tokens.ne(0).float().unsqueeze(-1)
        summed = (self.embed(tokens) * mask).sum(1)
        pooled = summed / mask.sum(1).clamp(min=1.0)
        return F.silu(self.proj(pooled))


class Localizer(nn.Module):
    """Mask prediction from the reference image and the locative clause via
    spatial attention between the text vector and the image feature map."""

    def __init__(self, vocab_size: int, width: int = 16):
        super().__init__()
        w = width
        self.img_enc = nn.Sequential(
            nn.Conv2d(3, w, 4, 2, 1), _gn(w), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, 2, 1), _gn(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 4, 2, 1), _gn(4 * w), nn.SiLU(),
        )
        self.text_enc = TextEncoder(vocab_size)
        self.attn_proj = nn.Linear(TEXT_DIM, 4 * w)
        self.mask_dec = nn.Sequential(
            nn.ConvTranspose2d(4 * w + 1, 2 * w, 4, 2, 1), _gn(2 * w), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, w, 4, 2, 1), _gn(w), nn.SiLU(),
            nn.ConvTranspose2d(w, w, 4, 2, 1), _gn(w), nn.SiLU(),
            nn.Conv2d(w, 1, 3, 1, 1),
        )

    def forward(self, images: torch.Tensor,
                loc_tokens: torch.Tensor) -> torch.Tensor:
        feat = self.img_enc(images)                          # (B, C, 8, 8)
        b, c, h, w = feat.shape
        query = self.attn_proj(self.text_enc(loc_tokens))    # (B, C)
        scores = torch.einsum("bc,bchw->bhw", query, feat) / c ** 0.5
        attn = torch.softmax(scores.reshape(b, -1), dim=-1).reshape(b, 1, h, w)
        weighted = feat * attn * (h * w)
        logits = self.mask_dec(torch.cat([weighted, attn], dim=1))
        return torch.sigmoid(logits)                         # (B, 1, 64, 64)


class Inpainter(nn.Module):
    """Completes the masked reference conditioned on the full instruction."""

    def __init__(self, vocab_size: int, width: int = 16):
        super().__init__()
        w = width
        self.enc1 = nn.Sequential(nn.Conv2d(3, w, 4, 2, 1), _gn(w), nn.SiLU())
        self.enc2 = nn.Sequential(nn.Conv2d(w, 2 * w, 4, 2, 1), _gn(2 * w),
                                  nn.SiLU())
        self.enc3 = nn.Sequential(nn.Conv2d(2 * w, 4 * w, 4, 2, 1),
                                  _gn(4 * w), nn.SiLU())
        self.text_enc = TextEncoder(vocab_size)
        self.fuse = nn.Sequential(
            nn.Conv2d(4 * w + TEXT_DIM, 4 * w, 1), _gn(4 * w), nn.SiLU(),
            nn.Conv2d(4 * w, 4 * w, 3, 1, 1), _gn(4 * w), nn.SiLU(),
        )
        self.up3 = nn.Sequential(nn.ConvTranspose2d(4 * w, 2 * w, 4, 2, 1),
                                 _gn(2 * w), nn.SiLU())
        self.dec2 = nn.Sequential(nn.Conv2d(4 * w, 2 * w, 3, 1, 1),
                                  _gn(2 * w), nn.SiLU())
        self.up2 = nn.Sequential(nn.ConvTranspose2d(2 * w, w, 4, 2, 1),
                                 _gn(w), nn.SiLU())
        self.dec1 = nn.Sequential(nn.Conv2d(2 * w, w, 3, 1, 1), _gn(w),
                                  nn.SiLU())
        self.up1 = nn.Sequential(nn.ConvTranspose2d(w, w, 4, 2, 1), _gn(w),
                                 nn.SiLU())
        self.out = nn.Conv2d(w, 3, 3, 1, 1)

    def forward(self, masked_images: torch.Tensor,
                how_tokens: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(masked_images)          # 32
        e2 = self.enc2(e1)                     # 16
        e3 = self.enc3(e2)                     # 8
        text = self.text_enc(how_tokens)
        cond = text[:, :, None, None].expand(-1, -1, e3.size(2), e3.size(3))
        h = self.fuse(torch.cat([e3, cond], dim=1))
        h = self.dec2(torch.cat([self.up3(h), e2], dim=1))
        h = self.dec1(torch.cat([self.up2(h), e1], dim=1))
        return torch.sigmoid(self.out(self.up1(h)))


class FeatureExtractor(nn.Module):
    """Three-block convolutional classifier pretrained on rendered scenes and
    then frozen; supplies classification heads, perceptual features and the
    embedding space used by retrieval and distribution metrics."""

    def __init__(self, width: int = 24, embed_dim: int = 128):
        super().__init__()
        w = width
        self.block1 = nn.Sequential(
            nn.Conv2d(3, w, 3, 1, 1), _gn(w), nn.SiLU(),
            nn.Conv2d(w, w, 4, 2, 1), _gn(w), nn.SiLU())
        self.block2 = nn.Sequential(
            nn.Conv2d(w, 2 * w, 3, 1, 1), _gn(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 4, 2, 1), _gn(2 * w), nn.SiLU())
        self.block3 = nn.Sequential(
            nn.Conv2d(2 * w, 4 * w, 3, 1, 1), _gn(4 * w), nn.SiLU(),
            nn.Conv2d(4 * w, 4 * w, 4, 2, 1), _gn(4 * w), nn.SiLU())
        self.to_embed = nn.Linear(4 * w, embed_dim)
        self.head_single = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.SiLU(),
            nn.Linear(embed_dim, N_CATEGORIES + 1))
        self.head_multi = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.SiLU(),
            nn.Linear(embed_dim, N_CATEGORIES))

    def features(self, images: torch.Tensor):
        f1 = self.block1(images)
        f2 = self.block2(f1)
        f3 = self.block3(f2)
        return f1, f2, f3

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        _, _, f3 = self.features(images)
        return F.silu(self.to_embed(f3.mean(dim=(2, 3))))

    def logits_single(self, images: torch.Tensor) -> torch.Tensor:
        return self.head_single(self.embed(images))

    def logits_multi(self, images: torch.Tensor) -> torch.Tensor:
        return self.head_multi(self.embed(images))

    def freeze(self) -> "FeatureExtractor":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()


class Discriminator(nn.Module):
    """Shared trunk with a global real/fake head and 25/24-way auxiliary
    classifier heads, plus a separate local head on the mask-bounded crop."""

    def __init__(self, width: int = 16):
        super().__init__()
        w = width
        self.trunk = nn.Sequential(
            nn.Conv2d(3, w, 4, 2, 1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, 2, 1), _gn(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 4, 2, 1), _gn(4 * w), nn.SiLU(),
        )
        self.global_head = nn.Sequential(
            nn.Conv2d(4 * w, 4 * w, 3, 1, 1), nn.SiLU())
        self.global_out = nn.Linear(4 * w, 1)
        self.class_neck = nn.Sequential(nn.Linear(4 * w, 4 * w), nn.SiLU())
        self.class_single = nn.Linear(4 * w, N_CATEGORIES + 1)
        self.class_multi = nn.Linear(4 * w, N_CATEGORIES)
        self.local_net = nn.Sequential(
            nn.Conv2d(3, w, 4, 2, 1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, 2, 1), _gn(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 4, 2, 1), _gn(4 * w), nn.SiLU(),
        )
        self.local_out = nn.Linear(4 * w, 1)

    def global_score(self, images: torch.Tensor) -> torch.Tensor:
        h = self.global_head(self.trunk(images)).mean(dim=(2, 3))
        return self.global_out(h).squeeze(-1)

    def local_score(self, crops: torch.Tensor) -> torch.Tensor:
        return self.local_out(self.local_net(crops).mean(dim=(2, 3))).squeeze(-1)

    def classify(self, images: torch.Tensor):
        h = self.class_neck(self.trunk(images).mean(dim=(2, 3)))
        return self.class_single(h), self.class_multi(h)


def binarize(mask: torch.Tensor, threshold: float = MASK_THRESHOLD):
    return (mask >= threshold).to(mask.dtype)


def crop_local(images: torch.Tensor, masks: torch.Tensor
               ) -> tuple[torch.Tensor, int]:
    """Mask-bounding-box crops resized to 32x32 for the local head.

    The box comes from the binarized, detached mask; an all-zero mask falls
    back to the center crop. Returns (crops, degenerate_count).
    """
    hard = binarize(masks.detach())
    crops = []
    degenerate = 0
    quarter = IMG_PX // 4
    for i in range(images.size(0)):
        nz = hard[i, 0].nonzero()
        if nz.numel() == 0:
            degenerate += 1
            r0 = c0 = quarter
            r1 = c1 = IMG_PX - quarter
        else:
            r0, c0 = int(nz[:, 0].min()), int(nz[:, 1].min())
            r1, c1 = int(nz[:, 0].max()) + 1, int(nz[:, 1].max()) + 1
        crop = images[i:i + 1, :, r0:r1, c0:c1]
        crops.append(F.interpolate(crop, size=(LOCAL_CROP, LOCAL_CROP),
                                   mode="bilinear", align_corners=False))
    return torch.cat(crops, dim=0), degenerate


@dataclass
class EditorParams:
    """All trainable/frozen networks of the editing stack plus the vocabulary.

    ``extractor`` stays frozen during adversarial training; `training`
    pins its parameter hash.
    """
    localizer: Localizer
    inpainter: Inpainter
    discriminator: Discriminator
    extractor: FeatureExtractor
    vocab: Vocab = field(default_factory=Vocab.default)
    use_localizer: bool = True

    @staticmethod
    def fresh(seed: int = 0, width: int = 16, extractor_width: int = 24,
              embed_dim: int = 128, use_localizer: bool = True,
              vocab: Vocab | None = None) -> "EditorParams":
        vocab = vocab or Vocab.default()
        torch.manual_seed(seed)
        return EditorParams(
            localizer=Localizer(len(vocab), width),
            inpainter=Inpainter(len(vocab), width),
            discriminator=Discriminator(width),
            extractor=FeatureExtractor(extractor_width, embed_dim),
            vocab=vocab,
            use_localizer=use_localizer,
        )

    def generator_parameters(self):
        yield from self.localizer.parameters()
        yield from self.inpainter.parameters()

    def generator_modules(self) -> dict[str, nn.Module]:
        return {"localizer": self.localizer, "inpainter": self.inpainter}


def loc_token_batch(params: EditorParams, locs: list[LocPhrase],
                    device=None) -> torch.Tensor:
    return encode_surfaces(params.vocab, [l.surface for l in locs], device)


def how_token_batch(params: EditorParams, instrs: list[Instruction],
                    device=None) -> torch.Tensor:
    return encode_surfaces(params.vocab, [i.surface for i in instrs], device)


def localize(params: EditorParams, images: torch.Tensor,
             locs: list[LocPhrase]) -> torch.Tensor:
    """Soft mask selecting where to edit; all-ones when the localizer is
    ablated away."""
    if not params.use_localizer:
        return torch.ones(images.size(0), 1, IMG_PX, IMG_PX,
                          dtype=images.dtype, device=images.device)
    tokens = loc_token_batch(params, locs, images.device)
    return params.localizer(images, tokens)


def inpaint(params: EditorParams, masked_images: torch.Tensor,
            instrs: list[Instruction]) -> torch.Tensor:
    tokens = how_token_batch(params, instrs, masked_images.device)
    return params.inpainter(masked_images, tokens)


def generate(params: EditorParams, images: torch.Tensor,
             instrs: list[Instruction]) -> tuple[torch.Tensor, torch.Tensor]:
    """Full edit: localize, blank the masked region, inpaint. Differentiable
    end-to-end through the soft mask."""
    masks = localize(params, images, [extract_loc(i) for i in instrs])
    edited = inpaint(params, (1.0 - masks) * images, instrs)
    return edited, masks


def discriminate(params: EditorParams, images: torch.Tensor,
                 masks: torch.Tensor):
    """(global_score, local_score, class_logits_single, class_logits_multi)."""
    crops, _ = crop_local(images, masks)
    d = params.discriminator
    single, multi = d.classify(images)
    return d.global_score(images), d.local_score(crops), single, multi


def localizer_loss(params: EditorParams, ref_images: torch.Tensor,
                   masks: torch.Tensor, y_in: torch.Tensor,
                   y_out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Classification pincer on the frozen extractor: the masked region must
    read as the reference object of interest (25-way, NONE included), the
    complement as the categories shared by reference and target (multi-label).
    """
    e = params.extractor
    loc_in = F.cross_entropy(e.logits_single(masks * ref_images), y_in)
    loc_out = F.binary_cross_entropy_with_logits(
        e.logits_multi((1.0 - masks) * ref_images), y_out)
    _assert_finite(loc_in=loc_in, loc_out=loc_out)
    return loc_in, loc_out


def inpainter_loss(params: EditorParams, ref_images: torch.Tensor,
                   gen_images: torch.Tensor, masks: torch.Tensor,
                   y_g_in: torch.Tensor, y_out: torch.Tensor):
    """(rec, p_in, p_out): unmasked-region reconstruction plus the auxiliary
    classifier on the generated image's masked/unmasked parts."""
    inv = 1.0 - masks
    rec = F.mse_loss(inv * ref_images, inv * gen_images)
    single, _ = params.discriminator.classify(masks * gen_images)
    p_in = F.cross_entropy(single, y_g_in)
    _, multi = params.discriminator.classify(inv * gen_images)
    p_out = F.binary_cross_entropy_with_logits(multi, y_out)
    _assert_finite(rec=rec, p_in=p_in, p_out=p_out)
    return rec, p_in, p_out


def _assert_finite(**terms: torch.Tensor) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise RuntimeError(f"loss term {name} is not finite")


# --- label plumbing -----------------------------------------------------------

def single_label_tensor(cats: list[int], device=None) -> torch.Tensor:
    """Class indices over 25 classes (the dummy NONE is index 24)."""
    if any(not 0 <= c <= NONE_ID for c in cats):
        raise ValueError("category id out of range")
    return torch.tensor(cats, dtype=torch.long, device=device)


def multi_label_tensor(label_sets: list[frozenset[int]], device=None,
                       dtype=torch.float32) -> torch.Tensor:
    out = torch.zeros(len(label_sets), N_CATEGORIES, dtype=dtype,
                      device=device)
    for i, labels in enumerate(label_sets):
        for c in labels:
            if not 0 <= c < N_CATEGORIES:
                raise ValueError("multi-label sets take real categories only")
            out[i, c] = 1.0
    return out
