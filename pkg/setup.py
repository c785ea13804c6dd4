from setuptools import setup, find_packages

setup(
    name='tvclt',
    version='0.1.0',
    description='Numerical certification of an explicit total-variation CLT bound',
    package_dir={'': 'src'},
    packages=find_packages(where='src'),
    include_package_data=True,
    package_data={
        'tvclt': ['config.schema.yml', 'suites/*.yml', 'docs/*.md'],
    },
    python_requires='>=3.9',
    install_requires=[
        'click',
        'rich',
        'ruamel.yaml',
        'numpy',
        'scipy',
        'matplotlib',
        # pytest is for testing, see requirements.txt
    ],
    entry_points={
        'console_scripts': [
            'tvclt=tvclt.entry:main',
        ],
    },
)
