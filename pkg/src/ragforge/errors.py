"""Exception types shared across the toolkit."""


class RagforgeError(Exception):
    """Base class for all toolkit errors."""


# --- corpus ---------------------------------------------------------------

class DecodeError(RagforgeError):
    """Raw input is not valid UTF-8 (after format extraction)."""


class EmptyDocument(RagforgeError):
    """No extractable text in the input."""


class InvalidConfig(RagforgeError):
    """A configuration value violates a precondition."""


# --- backends -------------------------------------------------------------

class BackendError(RagforgeError):
    """Backend call failed after exhausting retries. Carries the last cause."""


class ScriptExhausted(RagforgeError):
    """A scripted mock ran out of replies for the requested tag."""


class DimensionMismatch(RagforgeError):
    """Embedding server returned vectors of the wrong width."""


# --- datamodel ------------------------------------------------------------

class DanglingClue(RagforgeError):
    """An answer sentence cites a clue_id absent from the record's clue set."""


class TooManyHops(RagforgeError):
    """Variant enumeration requested for more hops than the combinatorial cap."""


# --- graph / synthesis ----------------------------------------------------

class NoCluesFound(RagforgeError):
    """Extraction yielded no usable clues. A signal, not a hard failure."""


class RejectedGeneration(RagforgeError):
    """Backend output failed parsing or validation after regeneration attempts."""


class DegenerateHop(RagforgeError):
    """A multi-hop answer does not use every clue it was given."""


# --- retrieval ------------------------------------------------------------

class DuplicateId(RagforgeError):
    """Two index entries share a chunk_id."""


class InsufficientCorpus(RagforgeError):
    """Fewer non-gold chunks available than negatives requested."""


# --- metrics --------------------------------------------------------------

class UnknownQuery(RagforgeError):
    """A run references a query_id missing from the dataset."""


class MissingRubric(RagforgeError):
    """A record needs a rubric (or gold sentences) for judged scoring."""
