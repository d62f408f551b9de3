"""Session fixtures that train the desk-scale pipeline once.

Only the acceptance tests request these, so individual unit files stay fast.
A full `pytest tests/` run pays the training cost exactly once; each bundle
records its wall time for the runtime-budget assertions. Nothing here is
cached across runs on purpose: the training outcomes are the thing under
test.
"""

import time

import numpy as np
import pytest

from ttig import contrastive, metrics, sampling, scenes, seq2seq, textproc, vq

HOLDOUT_SEED = 0
HOLDOUT_FRAC = 0.15
N_TRAIN = 2048
N_EVAL = 256
TOKENIZER_STEPS = 6000
MODEL_STEPS = 20000
RERANKER_STEPS = 3000
N_HELD_PROMPTS = 200
SAMPLES_PER_PROMPT = 16


@pytest.fixture(scope="session")
def caption_splits():
    return scenes.split_captions(HOLDOUT_SEED, HOLDOUT_FRAC)


@pytest.fixture(scope="session")
def train_data(caption_splits):
    _, held = caption_splits
    return scenes.gen_dataset(N_TRAIN, 0, exclude_captions=held)


@pytest.fixture(scope="session")
def eval_data(caption_splits):
    train_caps, _ = caption_splits
    return scenes.gen_dataset(N_EVAL, 1, exclude_captions=train_caps)


@pytest.fixture(scope="session")
def tokenizer_run(train_data):
    cfg = vq.TokenizerConfig(codebook_size=64)
    tcfg = vq.TokTrainConfig(steps=TOKENIZER_STEPS, batch=32)
    t0 = time.monotonic()
    w, history = vq.train_tokenizer(train_data.images, cfg, tcfg)
    return {"weights": w, "history": history,
            "seconds": time.monotonic() - t0}


@pytest.fixture(scope="session")
def model_run(train_data, tokenizer_run):
    tok = tokenizer_run["weights"]
    mcfg = seq2seq.ModelConfig()
    vocab = textproc.train_bpe(train_data.captions, vocab_size=mcfg.text_vocab)
    text_ids = np.asarray(
        [textproc.pad_to(textproc.encode_clipped(vocab, c, mcfg.text_len),
                         mcfg.text_len) for c in train_data.captions],
        dtype=np.int64)
    image_ids = vq.tokenize(tok, train_data.images).reshape(len(train_data), -1)
    w = seq2seq.build_model(mcfg, seed=0)
    t0 = time.monotonic()
    w, history = seq2seq.train_model(w, text_ids, image_ids,
                                     seq2seq.TrainConfig(steps=MODEL_STEPS))
    return {"weights": w, "vocab": vocab, "history": history,
            "text_ids": text_ids, "image_ids": image_ids,
            "seconds": time.monotonic() - t0}


@pytest.fixture(scope="session")
def guidance_run(model_run, tokenizer_run, caption_splits):
    """Both guidance arms over held-out prompts, scored by the oracle.

    The guided-arm images are kept so the rerank comparison can score the
    very same batches.
    """
    w, vocab = model_run["weights"], model_run["vocab"]
    tok = tokenizer_run["weights"]
    prompts = caption_splits[1][:N_HELD_PROMPTS]
    t0 = time.monotonic()

    def arm(lam, keep_images):
        scores, images = [], []
        cfg = sampling.SamplerConfig(guidance=lam,
                                     n_samples=SAMPLES_PER_PROMPT, seed=11)
        for prompt in prompts:
            batch = sampling.generate(w, vocab, tok, prompt, cfg)
            scores.append([metrics.caption_fidelity(img, prompt)
                           for img in batch.images])
            if keep_images:
                images.append(batch.images)
        return np.asarray(scores), images

    guided_scores, guided_images = arm(1.2, keep_images=True)
    uncond_scores, _ = arm(0.0, keep_images=False)
    return {"prompts": prompts,
            "guided_scores": guided_scores, "uncond_scores": uncond_scores,
            "guided_images": guided_images,
            "seconds": time.monotonic() - t0}


@pytest.fixture(scope="session")
def reranker_run(train_data):
    ecfg = contrastive.EncoderConfig()
    vocab = textproc.train_bpe(train_data.captions, vocab_size=ecfg.text_vocab)
    cap_ids = [textproc.encode_clipped(vocab, c, ecfg.text_len)
               for c in train_data.captions]
    t0 = time.monotonic()
    enc, history = contrastive.train_contrastive(
        train_data.images, cap_ids,
        contrastive.CLTrainConfig(steps=RERANKER_STEPS), ecfg)
    return {"encoder": enc, "vocab": vocab, "cap_ids": cap_ids,
            "history": history, "seconds": time.monotonic() - t0}
