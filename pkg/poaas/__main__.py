# python -m poaas <command> ...
from poaas.cli import main

main()
