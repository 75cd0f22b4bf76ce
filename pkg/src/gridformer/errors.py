"""Exception hierarchy.

``NumericalError`` subclasses map to CLI exit code 3 unless a more specific
code is registered in :mod:`gridformer.cli`.
"""


class GridformerError(Exception):
    pass


class CaseFileError(GridformerError, ValueError):
    """Malformed or inconsistent case file."""


class NumericalError(GridformerError, ArithmeticError):
    pass


class NearSingularResolvent(NumericalError):
    """``sI - A`` is (numerically) singular at the requested point."""


class IllPosedLoop(NumericalError):
    """Algebraic loop of an interconnection cannot be solved."""


class UnstableModel(NumericalError):
    pass


class NonpositiveTau(GridformerError, ValueError):
    pass


class NoEquilibrium(NumericalError):
    pass


class UnsupportedArchitecture(GridformerError, ValueError):
    pass


class BandOutsideGrid(GridformerError, ValueError):
    pass


class SingularAdmittance(NumericalError):
    pass


class SingularInteriorBlock(NumericalError):
    pass


class SingularClosedLoop(NumericalError):
    pass


class SingularBlock(NumericalError):
    pass


class SingularBMatrix(NumericalError):
    pass


class NoBracket(NumericalError):
    pass


class SearchSpaceTooLarge(GridformerError):
    pass
