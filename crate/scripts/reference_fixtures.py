"""Reference outputs from the Hugging Face GPT-2 implementation.

Two modes:

  python scripts/reference_fixtures.py tiny OUT_DIR
      Builds a small randomly initialised GPT-2, saves it (config.json,
      model.safetensors) and its reference outputs into OUT_DIR.

  python scripts/reference_fixtures.py gpt2 MODEL_DIR
      Loads GPT-2 from MODEL_DIR (config.json + model.safetensors, as
      downloaded from the `gpt2` hub repo) and writes reference outputs for
      five fixed prompts next to it.

Outputs: reference.json (prompt ids, greedy continuations, versions) and
reference.safetensors with `logits.{i}` [n_i, V] and `hidden.{i}` [L, n_i, d]
(embedding output and the outputs of blocks 1..L-1; the last hidden state
is omitted because Hugging Face applies ln_f to it).
"""
import json
import sys
from pathlib import Path

import torch
import transformers
from safetensors.torch import save_file
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

PROMPTS = [
    "Hinton is a prominent figure in the field of artificial intelligence and deep learning.",
    "The capital of France is",
    "Question: who wrote Pride and Prejudice?\nAnswer:",
    "1, 2, 3, 4, 5, 6,",
    "In 1969, Neil Armstrong became the first person to",
]
GREEDY_STEPS = 8
ASSETS = Path(__file__).resolve().parent.parent / "crates/logit-lens/assets/gpt2"


def tiny_model():
    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=320, n_positions=64, n_embd=32, n_layer=3, n_head=4,
        activation_function="gelu_new", layer_norm_epsilon=1e-5,
        resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0,
    )
    model = GPT2LMHeadModel(config)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "ln" in name and name.endswith("weight"):
                p.copy_(1.0 + 0.3 * torch.randn_like(p))
            else:
                p.copy_(0.2 * torch.randn_like(p))
    g = torch.Generator().manual_seed(99)
    prompts = [torch.randint(0, 320, (n,), generator=g).tolist() for n in (1, 5, 9, 16, 24)]
    return model, [{"ids": ids} for ids in prompts]


def gpt2_model(model_dir):
    model = GPT2LMHeadModel.from_pretrained(model_dir)
    tok = GPT2Tokenizer(str(ASSETS / "vocab.json"), str(ASSETS / "merges.txt"))
    return model, [{"text": t, "ids": tok.encode(t)} for t in PROMPTS]


def main():
    mode, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    model, prompts = tiny_model() if mode == "tiny" else gpt2_model(out)
    model.eval()
    if mode == "tiny":
        model.save_pretrained(out, safe_serialization=True)
        for extra in ("generation_config.json",):
            (out / extra).unlink(missing_ok=True)

    tensors = {}
    n_layer = model.config.n_layer
    with torch.no_grad():
        for i, p in enumerate(prompts):
            ids = torch.tensor([p["ids"]])
            res = model(ids, output_hidden_states=True)
            tensors[f"logits.{i}"] = res.logits[0].contiguous()
            tensors[f"hidden.{i}"] = torch.stack(res.hidden_states[:n_layer])[:, 0].contiguous()
            steps = min(GREEDY_STEPS, model.config.n_positions - len(p["ids"]))
            gen = model.generate(ids, max_new_tokens=steps, do_sample=False,
                                 attention_mask=torch.ones_like(ids), pad_token_id=0)
            p["greedy"] = gen[0].tolist()
    save_file(tensors, str(out / "reference.safetensors"))
    meta = {
        "mode": mode,
        "transformers": transformers.__version__,
        "torch": torch.__version__,
        "prompts": prompts,
    }
    (out / "reference.json").write_text(json.dumps(meta, indent=1, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
