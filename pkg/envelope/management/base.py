"""
Shared plumbing for the envelope management commands.

Option precedence: command-line flag > --config YAML file > settings.ENVELOPE.
Library errors become CommandError with exit code 2 (configuration),
3 (data) or 4 (numerical).
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import ConfigError, DataError, NumericalError
from ..forms import error_message
from ..services import load_config_file

logger = logging.getLogger(__name__)

EXIT_CODES = (
    (ConfigError, 2),
    (DataError, 3),
    (NumericalError, 4),
)

LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def merge_options(sections, config_path, flags):
    """
    Layer defaults, config file and flags for the given settings sections.

    Sections later in ``sections`` win on shared keys.
    """
    defaults = settings.ENVELOPE
    overrides = load_config_file(config_path) if config_path else {}
    for section, values in overrides.items():
        if section not in defaults:
            raise ConfigError(f"unknown config section {section!r}")
        unknown = sorted(set(values) - set(defaults[section]))
        if unknown:
            raise ConfigError(f"unknown key(s) in config section {section!r}: {', '.join(unknown)}")

    merged = {}
    for section in sections:
        merged.update(defaults[section])
        merged.update(overrides.get(section, {}))
    merged.update({key: value for key, value in flags.items() if value is not None})
    return merged


class EnvelopeCommand(BaseCommand):
    """Base command: --config/--seed/--threads, logging level and error mapping"""
    sections = ()
    form_class = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='YAML file with per-section overrides of the defaults')
        parser.add_argument('--seed', type=int, help='Random seed')
        parser.add_argument('--threads', type=int, help='Worker threads for parallel sections')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        logging.getLogger('envelope').setLevel(LOG_LEVELS.get(options['verbosity'], logging.DEBUG))
        try:
            return self.run(options)
        except CommandError:
            raise
        except tuple(cls for cls, _ in EXIT_CODES) as e:
            code = next(code for cls, code in EXIT_CODES if isinstance(e, cls))
            logger.debug(f"{type(e).__name__}: {e}")
            raise CommandError(str(e), returncode=code) from e

    def run(self, options):
        raise NotImplementedError('subclasses of EnvelopeCommand must provide a run() method')

    def resolve(self, options, form_class=None, sections=None, **extra):
        """Merged, validated options as a bound form."""
        form_class = form_class or self.form_class
        fields = form_class.base_fields
        flags = {key: options.get(key) for key in fields if key in options}
        flags.update(extra)
        data = merge_options(sections or self.sections, options.get('config'), flags)
        form = form_class(data={key: value for key, value in data.items() if key in fields})
        if not form.is_valid():
            raise ConfigError(error_message(form))
        return form

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
