import logging
import os
import sys
from typing import List, Optional

from app.cli.commands import build_parser
from app.models.errors import ConfigError, VpsError
from app.models.tensor import set_debug

logger = logging.getLogger("app")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def main(argv: Optional[List[str]] = None) -> int:
    """
    Точка входу в застосунок.
    Відповідає тільки за:
    - розбір аргументів;
    - налаштування логування;
    - виклик підкоманди й перетворення помилок у код виходу.
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)

    if args.debug:
        set_debug(True)
        # робочі процеси --jobs читають прапорець з оточення
        os.environ["PARKING_VPS_DEBUG"] = "1"

    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.debug("configuration error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (VpsError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
