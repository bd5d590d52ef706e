"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class CSCError(Exception):
    exit_code = 2


class DataError(CSCError):
    """Malformed or inconsistent input data (lexicon files, corpora, alignments)."""

    exit_code = 2


class LexiconError(DataError):
    pass


class CorpusError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(CSCError):
    """A non-finite value or an undefined quantity (e.g. cosine of a zero vector)."""

    exit_code = 3
