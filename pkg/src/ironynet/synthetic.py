"""Synthetic irony task for end-to-end verification.

Samples are built from topic clusters. Each sample draws a text cluster and
an image cluster; agreement between them encodes the label (mismatch means
ironic). Text words, caption words, and image attribute words are disjoint
string sets, so cross-modal alignment is not learnable from shared tokens:
it must come either from the concept tables (text words and image words of
one cluster link to the same topic concept) or from end-to-end training.
A coverage knob leaves some words without concept entries, which keeps the
knowledge features informative but not sufficient on their own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SyntheticSpec:
    seed: int = 2024
    n_samples: int = 2000
    n_clusters: int = 6
    words_per_cluster: int = 8
    tokens_per_sample: int = 5
    attrs_per_sample: int = 3
    caption_tokens_per_sample: int = 3
    noise_words: int = 24
    noise_per_sample: int = 2
    attr_noise_rate: float = 0.0  # chance an attribute comes from a random cluster
    caption_noise_rate: float = 0.0  # chance a caption token is generic noise
    concept_coverage: float = 0.8
    concept_dim: int = 300
    image_vec_dim: int = 0  # when > 0, samples carry a precomputed image vector
    image_vec_noise: float = 0.3
    ironic_rate: float = 0.5
    empty_caption_rate: float = 0.1
    splits: tuple[float, float] = (0.6, 0.2)  # train, val; rest is test


def _cluster_vocab(spec: SyntheticSpec):
    text = [[f"t{k}w{i}" for i in range(spec.words_per_cluster)] for k in range(spec.n_clusters)]
    caption = [[f"c{k}w{i}" for i in range(spec.words_per_cluster)] for k in range(spec.n_clusters)]
    attrs = [[f"a{k}w{i}" for i in range(spec.words_per_cluster)] for k in range(spec.n_clusters)]
    noise = [f"n{i}" for i in range(spec.noise_words)]
    return text, caption, attrs, noise


def generate_task(out_dir, spec: SyntheticSpec | None = None) -> dict[str, str]:
    """Write dataset splits, concept fixtures, and a ready-to-run config.

    Returns a path map: train/val/test, numberbatch, edges, vocab, config.
    """
    spec = spec or SyntheticSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    text_v, caption_v, attr_v, noise_v = _cluster_vocab(spec)

    # cluster prototypes for the precomputed-image-vector path
    prototypes = None
    if spec.image_vec_dim > 0:
        prototypes = rng.standard_normal((spec.n_clusters, spec.image_vec_dim))
        prototypes /= np.sqrt(np.sum(prototypes * prototypes, axis=1, keepdims=True))

    samples = []
    for idx in range(spec.n_samples):
        ironic = int(rng.random() < spec.ironic_rate)
        k_text = int(rng.integers(spec.n_clusters))
        if ironic:
            shift = 1 + int(rng.integers(spec.n_clusters - 1))
            k_img = (k_text + shift) % spec.n_clusters
        else:
            k_img = k_text
        tokens = [
            text_v[k_text][int(rng.integers(spec.words_per_cluster))]
            for _ in range(spec.tokens_per_sample)
        ]
        tokens += [noise_v[int(rng.integers(spec.noise_words))] for _ in range(spec.noise_per_sample)]
        attrs = []
        for _ in range(spec.attrs_per_sample):
            k = int(rng.integers(spec.n_clusters)) if rng.random() < spec.attr_noise_rate else k_img
            attrs.append(attr_v[k][int(rng.integers(spec.words_per_cluster))])
        if rng.random() < spec.empty_caption_rate:
            caption = ""
        else:
            cap_tokens = []
            for _ in range(spec.caption_tokens_per_sample):
                if rng.random() < spec.caption_noise_rate:
                    cap_tokens.append(noise_v[int(rng.integers(spec.noise_words))])
                else:
                    cap_tokens.append(caption_v[k_img][int(rng.integers(spec.words_per_cluster))])
            caption = " ".join(cap_tokens)
        image_vec = None
        if prototypes is not None:
            vec = prototypes[k_img] + spec.image_vec_noise * rng.standard_normal(spec.image_vec_dim)
            image_vec = [round(float(x), 6) for x in vec]
        samples.append(
            {
                "id": f"s{idx:05d}",
                "text": " ".join(tokens),
                "caption": caption,
                "image_attrs": attrs,
                "image_vec": image_vec,
                "label": ironic,
            }
        )

    n_train = int(spec.splits[0] * spec.n_samples)
    n_val = int(spec.splits[1] * spec.n_samples)
    paths = {}
    for name, chunk in (
        ("train", samples[:n_train]),
        ("val", samples[n_train : n_train + n_val]),
        ("test", samples[n_train + n_val :]),
    ):
        p = out / f"{name}.jsonl"
        with open(p, "w", encoding="utf-8") as fh:
            for rec in chunk:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        paths[name] = str(p)

    # Concept space: one topic vector per cluster; covered words get a noisy
    # copy of their topic vector and an edge to the topic.
    topics = rng.standard_normal((spec.n_clusters, spec.concept_dim))
    topics /= np.sqrt(np.sum(topics * topics, axis=1, keepdims=True))
    nb_lines = []
    edge_rows = []
    vocab_words = []
    for k in range(spec.n_clusters):
        topic = f"topic{k}"
        nb_lines.append((topic, topics[k]))
        for group in (text_v[k], caption_v[k], attr_v[k]):
            for word in group:
                vocab_words.append(word)
                if rng.random() >= spec.concept_coverage:
                    continue
                vec = topics[k] + 0.05 * rng.standard_normal(spec.concept_dim)
                vec /= np.sqrt(vec @ vec)
                nb_lines.append((word, vec))
                edge_rows.append((word, "RelatedTo", topic, 2.0))
                # distractor edge outside the default relation filter
                edge_rows.append((word, "Antonym", f"topic{(k + 1) % spec.n_clusters}", 3.0))
    vocab_words.extend(noise_v)

    nb_path = out / "numberbatch.txt"
    with open(nb_path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(nb_lines)} {spec.concept_dim}\n")
        for word, vec in nb_lines:
            fh.write(f"/c/en/{word} " + " ".join(f"{x:.6f}" for x in vec) + "\n")
    paths["numberbatch"] = str(nb_path)

    edges_path = out / "edges.csv"
    with open(edges_path, "w", encoding="utf-8") as fh:
        fh.write("start,relation,end,weight\n")
        for start, rel, end, w in edge_rows:
            fh.write(f"{start},{rel},{end},{w}\n")
    paths["edges"] = str(edges_path)

    vocab_path = out / "vocab.txt"
    vocab_path.write_text("\n".join(sorted(set(vocab_words))) + "\n", encoding="utf-8")
    paths["vocab"] = str(vocab_path)

    config = {
        "model.hidden_dim": 16,
        "model.embed_dim": 16,
        "model.shared_dim": 8,
        "model.fused_dim": 16,
        "model.concept_dim": spec.concept_dim,
        "model.max_len": 128,
        "model.lambda": 0.1,
        "model.margin": 0.5,
        "model.learning_rate": 0.01,
        "model.batch_size": 32,
        "model.mask_ratio": 0.15,
        "model.concept_k": 5,
        "model.momentum": 0.9,
        "model.eps": 1e-05,
        "model.seed": spec.seed,
        "model.image_feature_dim": spec.image_vec_dim if spec.image_vec_dim > 0 else None,
        "data.train": str(out / "train.jsonl"),
        "data.val": str(out / "val.jsonl"),
        "data.test": str(out / "test.jsonl"),
        "knowledge.numberbatch": str(nb_path),
        "knowledge.edges": str(edges_path),
        "train.stage1_epochs": 2,
        "train.stage3_epochs": 20,
        "train.patience": 6,
        "out.model": str(out / "model.bin"),
        "out.log": str(out / "epochs.jsonl"),
        "out.report": str(out / "ablation.json"),
    }
    config_path = out / "config.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["config"] = str(config_path)
    return paths


def main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(description="generate the synthetic irony task")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--samples", type=int, default=2000)
    args = parser.parse_args(argv)
    paths = generate_task(args.out_dir, SyntheticSpec(seed=args.seed, n_samples=args.samples))
    print(json.dumps(paths, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
