import sys

from sourcevalue.cli.commands import main

# Entry point: python -m sourcevalue <command> --config run.json
if __name__ == "__main__":
    sys.exit(main())
