"""Punto de entrada ``essvi-mm``: train | diag | plot-data sobre los comandos de Django."""
import os
import sys

# Subcomandos de la consola con guion -> nombre del management command
COMMAND_ALIASES = {
    'plot-data': 'plot_data',
}


def main(argv=None):
    """Reenvía los argumentos a ``execute_from_command_line``."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'essvi_mm.settings')
    from django.core.management import execute_from_command_line

    argv = list(sys.argv if argv is None else argv)
    if len(argv) > 1:
        argv[1] = COMMAND_ALIASES.get(argv[1], argv[1])
    execute_from_command_line(argv)


if __name__ == '__main__':
    main()
