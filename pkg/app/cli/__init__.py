# Command-line surface; one module per subcommand, wired together in cli.py
