"""Reference token ids from the Hugging Face GPT-2 tokenizer.

Usage: python scripts/tokenizer_fixture.py > crates/logit-lens/tests/fixtures/tokenizer_ids.json
"""
import json
import sys
from pathlib import Path

from transformers import GPT2Tokenizer

ASSETS = Path(__file__).resolve().parent.parent / "crates/logit-lens/assets/gpt2"

CORPUS = [
    "Hinton is a prominent figure in the field of artificial intelligence and deep learning.",
    "Hello, world",
    " Paris",
    "The capital of France is Paris.",
    "I'll be there; you're late, they've gone, she'd said it's fine.",
    "DON'T SHOUT'S",
    "Numbers: 3.14159, 2024-10-16, 1,000,000 and 42nd.",
    "  leading spaces and trailing   ",
    "tabs\tand\nnewlines\n\nand \n mixed  \t whitespace",
    "Unicode: naïve café, 東京タワー, Ελληνικά, emoji 🎉🚀.",
    "Question: who wrote the book?\nAnswer:",
    "Document [1](Title: Albert Einstein) Albert Einstein was a German-born theoretical physicist.",
    "<|endoftext|> marks a boundary<|endoftext|>",
    "a" * 40,
    "supercalifragilisticexpialidocious antidisestablishmentarianism",
    "email@example.com https://example.org/path?q=1&r=2",
    "''''\"\"\"```",
    "x",
    "",
]


def main():
    tok = GPT2Tokenizer(str(ASSETS / "vocab.json"), str(ASSETS / "merges.txt"))
    cases = [{"text": t, "ids": tok.encode(t)} for t in CORPUS]
    lines = ",\n".join("  " + json.dumps(c, ensure_ascii=False) for c in cases)
    sys.stdout.write('{"cases": [\n' + lines + "\n]}\n")


if __name__ == "__main__":
    main()
