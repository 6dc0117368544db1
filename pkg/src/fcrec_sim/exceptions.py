"""Custom exception types pro FCRec simulátor."""


class FCRecException(Exception):
    """Základní exception pro všechny chyby simulátoru."""

    pass


class FCRecValidationError(FCRecException):
    """Chyba validace vstupu operace (neplatný parametr, chybějící položka, atd.)."""

    pass


class FCRecConfigError(FCRecException):
    """Neplatná konfigurace experimentu."""

    pass


class FCRecDataError(FCRecException):
    """Chyba při načítání nebo zpracování dat interakcí."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class FCRecDivergenceError(FCRecException):
    """Nekonečná/NaN hodnota loss nebo gradientu při lokálním tréninku."""

    def __init__(self, message: str, user: int | None = None):
        super().__init__(message)
        self.user = user


class FCRecAggregationError(FCRecException):
    """Chyba agregace na serveru (prázdné uploady, nesoulad indexu)."""

    pass
