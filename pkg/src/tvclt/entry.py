import sys


def main():
    """
    Entry point for the tvclt console script.
    - 'tvclt' -> shows the command help
    - 'tvclt [command]' -> runs the command
    """
    try:
        from tvclt.cli.tvclt import cli
    except ImportError as e:
        print(f"Error importing CLI module: {e}")
        sys.exit(1)
    cli()


if __name__ == "__main__":
    main()
