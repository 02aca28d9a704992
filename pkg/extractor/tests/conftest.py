from __future__ import annotations

import pytest


def build_tiny_model(target_dir, seed=0):
    """A tiny randomly initialized causal LM with a BPE tokenizer trained on
    the test corpus, saved as a local HF model directory."""
    import torch
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    texts = [t["question"] + " " + t["reasoning"] + " " + t["answer"] for t in RAW_TRACES]
    tok = Tokenizer(models.BPE(unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=400, special_tokens=["<unk>", "<pad>"], show_progress=False
    )
    tok.train_from_iterator(texts, trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>", pad_token="<pad>")
    fast.save_pretrained(target_dir)

    vocab_size = max(fast.get_vocab().values()) + 1
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=vocab_size, n_positions=512, n_embd=32, n_layer=2, n_head=2,
        bos_token_id=None, eos_token_id=None,
    )
    model = GPT2LMHeadModel(config)
    model.eval()
    model.save_pretrained(target_dir)
    return target_dir


def _make_raw_traces():
    """20 hand-written arithmetic traces, some with standalone boxed lines."""
    base = [
        ("add", "What is {a} + {b}?",
         "First write down the numbers {a} and {b}. Adding the units gives {c}. "
         "So the total is {c}. The answer is {c}.",
         "{c}"),
        ("mul", "Compute {a} times {b}.",
         "Set up the product {a} * {b}. Multiply step by step. {a} * {b} = {c}.\n"
         "$\\boxed{{{c}}}$\nTherefore the result equals {c}.",
         "{c}"),
        ("sub", "What is {a} minus {b}?",
         "Start from {a}. Take away {b} from it. That leaves {c}. "
         "Check: {c} + {b} = {a}. So the difference is {c}.",
         "{c}"),
        ("div", "Divide {a} by {b}.",
         "We want {a} / {b}. Note {b} * {c} = {a}. Hence the quotient is {c}. "
         "The final answer is {c}.",
         "{c}"),
    ]
    cases = [(7, 5, 12), (9, 3, 27), (14, 6, 8), (24, 4, 6), (11, 2, 13)]
    traces = []
    for i, (a, b, c) in enumerate(cases):
        for kind, q, r, ans in base:
            traces.append(
                {
                    "id": f"{kind}-{i:02d}",
                    "question": q.format(a=a, b=b, c=c),
                    "reasoning": r.format(a=a, b=b, c=c),
                    "answer": ans.format(a=a, b=b, c=c),
                }
            )
    return traces


RAW_TRACES = _make_raw_traces()


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    target = tmp_path_factory.mktemp("tiny-model")
    return str(build_tiny_model(target))


@pytest.fixture(scope="session")
def raw_traces():
    return RAW_TRACES
