from .grammar import Grammar, Rule, load_grammar, read_grammar
from .lm import NGramLM, load_lm, lm_logprob, read_arpa, train_add_k, write_arpa
from .search import DecodeError, Decoder, DecoderConfig, decode, decode_corpus, rescore_nbest

__all__ = [
    "Grammar", "Rule", "load_grammar", "read_grammar",
    "NGramLM", "load_lm", "lm_logprob", "read_arpa", "train_add_k", "write_arpa",
    "DecodeError", "Decoder", "DecoderConfig", "decode", "decode_corpus", "rescore_nbest",
]
