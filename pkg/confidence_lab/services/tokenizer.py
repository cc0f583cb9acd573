"""
Character tokenizer for the toy ASR
Fixed vocabulary: PAD, BOS, EOS, SPACE and the lowercase alphabet
"""

import logging
import string
from typing import Dict, List, Sequence

from ..core.exceptions import VocabularyError

logger = logging.getLogger(__name__)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SPACE_ID = 3
ALPHABET = string.ascii_lowercase


class Tokenizer:
    """Bijective character <-> id maps; SPACE tokens delimit words"""

    def __init__(self, alphabet: str = ALPHABET):
        if len(set(alphabet)) != len(alphabet) or " " in alphabet:
            raise VocabularyError("alphabet must be distinct characters without space")
        self.alphabet = alphabet
        self.char_to_id: Dict[str, int] = {ch: i + 4 for i, ch in enumerate(alphabet)}
        self.char_to_id[" "] = SPACE_ID
        self.id_to_char: Dict[int, str] = {i: ch for ch, i in self.char_to_id.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 4

    def is_marker(self, token_id: int) -> bool:
        """SPACE and EOS close a word"""
        return token_id in (SPACE_ID, EOS_ID)

    def tokenize(self, text: str) -> List[int]:
        ids = []
        for ch in text:
            token = self.char_to_id.get(ch)
            if token is None:
                raise VocabularyError(f"character {ch!r} is outside the tokenizer alphabet")
            ids.append(token)
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        """Inverse of tokenize; BOS/EOS/PAD are dropped"""
        chars = []
        for token in ids:
            if token in (PAD_ID, BOS_ID, EOS_ID):
                continue
            ch = self.id_to_char.get(int(token))
            if ch is None:
                raise VocabularyError(f"token id {token} is outside the vocabulary")
            chars.append(ch)
        return "".join(chars)

    def word_final_indices(self, ids: Sequence[int], use_markers: bool = False) -> List[int]:
        """Index of the token that closes each word.

        Plain text (use_markers=False): the last character of every word.
        Hypotheses (use_markers=True): the last SPACE/EOS marker in the run following
        a word, or the word's last character when nothing follows it. Leading markers
        fall into the first word's span, so spans partition the tokens.
        """
        finals: List[int] = []
        n = len(ids)
        if not use_markers:
            for i, token in enumerate(ids):
                if not self.is_marker(token) and (i + 1 == n or self.is_marker(ids[i + 1])):
                    finals.append(i)
            return finals

        i = 0
        while i < n:
            if self.is_marker(ids[i]):
                i += 1
                continue
            while i < n and not self.is_marker(ids[i]):
                i += 1
            if i == n:
                finals.append(n - 1)
                break
            while i + 1 < n and self.is_marker(ids[i + 1]):
                i += 1
            finals.append(i)
            i += 1
        return finals


# Global tokenizer instance
tokenizer = Tokenizer()
