"""
Helpers shared by the management commands: exit-code mapping and
argument parsing.
"""
from contextlib import contextmanager

from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from apps.core.exceptions import (
    DataFormatError, DataIOError, DivergenceError, GeometryError, ShapeMismatchError,
)

EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def validation_message(exc):
    if hasattr(exc, 'error_dict'):
        return '; '.join(f"{name}: {' '.join(messages)}" for name, messages in exc.message_dict.items())
    return '; '.join(exc.messages)


@contextmanager
def exit_codes():
    """Translate engine errors into CommandError with the documented return codes."""
    try:
        yield
    except DivergenceError as exc:
        raise CommandError(f"{exc} (iteration {exc.iteration})", returncode=EXIT_DIVERGED) from exc
    except ValidationError as exc:
        raise CommandError(validation_message(exc), returncode=EXIT_USAGE) from exc
    except (GeometryError, ShapeMismatchError) as exc:
        raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
    except (DataFormatError, DataIOError) as exc:
        raise CommandError(str(exc), returncode=EXIT_IO) from exc


def usage_error(message):
    return CommandError(message, returncode=EXIT_USAGE)


def parse_int_list(value):
    try:
        items = tuple(int(item) for item in value.split(',') if item.strip())
    except ValueError:
        raise usage_error(f"Expected a comma separated list of integers, got '{value}'")
    if not items:
        raise usage_error("Expected at least one value")
    return items


def parse_str_list(value):
    return tuple(item.strip().lower() for item in value.split(',') if item.strip())
